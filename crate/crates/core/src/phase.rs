//! Phases, phase sets and per-phase impedance matrices.

use core::fmt;

use num_complex::Complex64;

/// One of the three phases. The discriminant is the numeral used for phase
/// differences (a = 0, b = 1, c = 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A = 0,
    B = 1,
    C = 2,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A subset of {a, b, c} stored as a bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(phase: Phase) -> Self {
        PhaseSet(1 << phase.index())
    }

    pub fn from_phases<I: IntoIterator<Item = Phase>>(phases: I) -> Self {
        let mut set = PhaseSet::EMPTY;
        for p in phases {
            set.insert(p);
        }
        set
    }

    /// Parses strings such as `"abc"`, `"b"` or `"ac"`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut set = PhaseSet::EMPTY;
        for c in s.chars() {
            set.insert(Phase::from_char(c)?);
        }
        (!set.is_empty()).then_some(set)
    }

    pub fn insert(&mut self, phase: Phase) {
        self.0 |= 1 << phase.index();
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Phases in ascending order.
    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// 3x3 complex matrix indexed by phase numerals. Entries for phases a line
/// or node does not carry are zero.
pub type PhaseMatrix = [[Complex64; 3]; 3];

pub const ZERO_PHASE_MATRIX: PhaseMatrix = [[Complex64::new(0.0, 0.0); 3]; 3];

/// `ω^k` with `ω = e^{-i 2π/3}`. Powers are reduced modulo 3 and `ω^0` is
/// exactly one.
pub fn omega_pow(k: i32) -> Complex64 {
    match k.rem_euclid(3) {
        0 => Complex64::new(1.0, 0.0),
        r => {
            let angle = -2.0 * core::f64::consts::PI * r as f64 / 3.0;
            Complex64::new(libm::cos(angle), libm::sin(angle))
        }
    }
}

/// Balanced slack phasor for `phase` with the given magnitude: angles 0,
/// -2π/3 and +2π/3 for phases a, b and c.
pub fn slack_phasor(magnitude: f64, phase: Phase) -> Complex64 {
    omega_pow(phase.index() as i32) * magnitude
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn phase_set_parse_and_display() {
        let s = PhaseSet::parse("ca").unwrap();
        assert_eq!(s.to_string(), "ac");
        assert!(PhaseSet::parse("").is_none());
        assert!(PhaseSet::parse("ad").is_none());
        assert!(PhaseSet::single(Phase::B).is_subset(PhaseSet::ABC));
        assert!(!PhaseSet::ABC.is_subset(s));
    }

    #[test]
    fn omega_powers() {
        assert_eq!(omega_pow(0), Complex64::new(1.0, 0.0));
        assert_eq!(omega_pow(3), Complex64::new(1.0, 0.0));
        let w = omega_pow(1);
        assert!((w.re + 0.5).abs() < 1e-15 && (w.im + 0.75f64.sqrt()).abs() < 1e-15);
        let w2 = omega_pow(-1);
        assert!((w2 - omega_pow(2)).norm() < 1e-15);
        assert!((w * w2 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
