use std::f64::consts::PI;

use super::{Quat, QuatError};

/// Proper rotations of a crystal point group.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrySet {
    pub operators: Vec<Quat>,
}

impl SymmetrySet {
    /// Point group 622: identity, 60k° about [0001], and 180° about six
    /// basal axes at 0°, 30°, .., 150° from a1.
    pub fn hexagonal() -> Self {
        let mut operators = Vec::with_capacity(12);
        for k in 0..6 {
            let half = k as f64 * PI / 6.0;
            operators.push(snap(Quat::new(half.cos(), 0.0, 0.0, half.sin())));
        }
        for k in 0..6 {
            let phi = k as f64 * PI / 6.0;
            operators.push(snap(Quat::new(0.0, phi.cos(), phi.sin(), 0.0)));
        }
        SymmetrySet { operators }
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Quat> {
        self.operators.iter()
    }
}

// cos(90°) and friends come out as ~6e-17; zero them so the hemisphere
// rule sees exact signs.
fn snap(q: Quat) -> Quat {
    let z = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    Quat::new(z(q.q0), z(q.q1), z(q.q2), z(q.q3)).hemisphere()
}

impl Default for SymmetrySet {
    fn default() -> Self {
        SymmetrySet::hexagonal()
    }
}

/// Smallest rotation angle (radians) between `q1` and any `s ⊗ q2`.
pub fn misorientation(q1: Quat, q2: Quat, sym: &SymmetrySet) -> Result<f64, QuatError> {
    let (q1, q2) = (q1.check_unit()?.normalize()?, q2.check_unit()?.normalize()?);
    let mut best = (f64::NEG_INFINITY, q2);
    for &s in sym.iter() {
        let c = s * q2;
        let dot = q1.dot(c);
        if dot.abs() > best.0 {
            best = (dot.abs(), if dot < 0.0 { -c } else { c });
        }
    }
    // chord form: exact zero for equal inputs, well conditioned near zero
    let d = (q1 - best.1).norm().min(2.0);
    Ok(4.0 * (d / 2.0).asin())
}

/// Symmetry-equivalent representative with the largest `q0`.
///
/// Near-ties keep the earliest operator so the result is idempotent.
pub fn symmetry_reduce(q: Quat, sym: &SymmetrySet) -> Result<Quat, QuatError> {
    let q = q.check_unit()?;
    let mut best = (q.hemisphere(), f64::NEG_INFINITY);
    for &s in sym.iter() {
        let c = (s * q).hemisphere();
        if c.q0 > best.1 + 1e-12 {
            best = (c, c.q0);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn twelve_unit_operators_with_identity() {
        let sym = SymmetrySet::hexagonal();
        assert_eq!(sym.len(), 12);
        assert_eq!(sym.operators[0], Quat::IDENTITY);
        for s in sym.iter() {
            assert!((s.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_under_products() {
        let sym = SymmetrySet::hexagonal();
        for &a in sym.iter() {
            for &b in sym.iter() {
                let p = a * b;
                let found = sym
                    .iter()
                    .any(|&s| (s - p).norm().min((s + p).norm()) < 1e-12);
                assert!(found, "{a:?} * {b:?} not in group");
            }
        }
    }

    #[test]
    fn misorientation_examples() {
        let sym = SymmetrySet::hexagonal();
        let z = [0.0, 0.0, 1.0];
        let q = Quat::from_axis_angle([0.3, -0.2, 0.9], 0.4);
        assert!(misorientation(q, q, &sym).unwrap() < 1e-7);
        let r60 = Quat::from_axis_angle(z, deg(60.0));
        assert!(misorientation(Quat::IDENTITY, r60, &sym).unwrap() < 1e-7);
        let r30 = Quat::from_axis_angle(z, deg(30.0));
        let m = misorientation(Quat::IDENTITY, r30, &sym).unwrap();
        assert!((m - PI / 6.0).abs() < 1e-12, "{m}");
        let bad = Quat::new(2.0, 0.0, 0.0, 0.0);
        assert!(matches!(misorientation(bad, q, &sym), Err(QuatError::NotUnit { .. })));
    }

    #[test]
    fn reduce_examples() {
        let sym = SymmetrySet::hexagonal();
        assert_eq!(symmetry_reduce(Quat::IDENTITY, &sym).unwrap(), Quat::IDENTITY);
        let r60 = Quat::from_axis_angle([0.0, 0.0, 1.0], deg(60.0));
        let r = symmetry_reduce(r60, &sym).unwrap();
        assert!((r - Quat::IDENTITY).norm() < 1e-12, "{r:?}");
    }
}
