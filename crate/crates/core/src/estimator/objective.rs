use alloc::vec::Vec;

use crate::error::{DsseError, Result};
use crate::measurements::MeasurementSet;
use crate::sensitivity::{Injections, SensitivityModel};

fn check(ms: &MeasurementSet, sm: &SensitivityModel, z: &Injections) -> Result<()> {
    let n = sm.dim();
    for len in [ms.dim(), z.p.len(), z.q.len()] {
        if len != n {
            return Err(DsseError::DimensionMismatch { expected: n, found: len });
        }
    }
    Ok(())
}

/// WLS cost for a state and the voltages attached to it.
pub fn objective_at(ms: &MeasurementSet, z: &Injections, v: &[f64]) -> f64 {
    let mut c = 0.0;
    for k in 0..ms.dim() {
        if let Some(s) = ms.sigma_p[k] {
            let d = z.p[k] - ms.p_hat[k];
            c += d * d / (2.0 * s * s);
        }
        if let Some(s) = ms.sigma_q[k] {
            let d = z.q[k] - ms.q_hat[k];
            c += d * d / (2.0 * s * s);
        }
    }
    for m in &ms.meters {
        let d = v[m.slot] - m.v_hat;
        c += d * d / (2.0 * m.sigma_v * m.sigma_v);
    }
    c
}

/// WLS cost with voltages from the linear model.
pub fn wls_objective(ms: &MeasurementSet, sm: &SensitivityModel, z: &Injections) -> Result<f64> {
    check(ms, sm, z)?;
    Ok(objective_at(ms, z, &sm.predict_voltage(z)?))
}

/// `ν_j = (v_j - v̂_j) / σ²_{v_j}` per meter, in meter order.
pub fn nu(ms: &MeasurementSet, v: &[f64]) -> Vec<f64> {
    ms.meters.iter().map(|m| (v[m.slot] - m.v_hat) / (m.sigma_v * m.sigma_v)).collect()
}

/// Gradient of the WLS cost at `z` where the voltage residuals are taken
/// from `v` (linear model or feedback).
pub fn gradient_at(ms: &MeasurementSet, sm: &SensitivityModel, z: &Injections, v: &[f64]) -> Injections {
    let n = sm.dim();
    let nus = nu(ms, v);
    let (r, x) = (sm.r(), sm.x());
    let mut g = Injections::zeros(n);
    for k in 0..n {
        let mut alpha = 0.0;
        let mut beta = 0.0;
        for (m, nu_m) in ms.meters.iter().zip(&nus) {
            alpha += r[(m.slot, k)] * nu_m;
            beta += x[(m.slot, k)] * nu_m;
        }
        g.p[k] = alpha + ms.sigma_p[k].map_or(0.0, |s| (z.p[k] - ms.p_hat[k]) / (s * s));
        g.q[k] = beta + ms.sigma_q[k].map_or(0.0, |s| (z.q[k] - ms.q_hat[k]) / (s * s));
    }
    g
}

/// Exact gradient of [`wls_objective`].
pub fn gradient(ms: &MeasurementSet, sm: &SensitivityModel, z: &Injections) -> Result<Injections> {
    check(ms, sm, z)?;
    let v = sm.predict_voltage(z)?;
    Ok(gradient_at(ms, sm, z, &v))
}

/// Projection onto the feasible boxes of `ms`.
pub fn project(ms: &MeasurementSet, z: &mut Injections) {
    ms.project(z);
}
