//! Complex scattering amplitudes at a single angle.

use crate::specfun::ComplexValue;

/// Amplitudes S1 (perpendicular) and S2 (parallel) at one scattering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmplitudePair {
    pub s1: ComplexValue,
    pub s2: ComplexValue,
}

impl AmplitudePair {
    pub fn new(s1: ComplexValue, s2: ComplexValue) -> Self {
        Self { s1, s2 }
    }

    /// |S1|^2 + |S2|^2, the unpolarized intensity.
    pub fn intensity(&self) -> f64 {
        self.s1.norm_sqr() + self.s2.norm_sqr()
    }

    /// (|S1| + |S2|) / 2, the quantity used to compare methods.
    pub fn mean_magnitude(&self) -> f64 {
        0.5 * (self.s1.norm() + self.s2.norm())
    }
}

impl std::ops::Add for AmplitudePair {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.s1 + rhs.s1, self.s2 + rhs.s2)
    }
}

impl std::ops::AddAssign for AmplitudePair {
    fn add_assign(&mut self, rhs: Self) {
        self.s1 += rhs.s1;
        self.s2 += rhs.s2;
    }
}
