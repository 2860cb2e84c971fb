use std::f64::consts::PI;

use super::Quat;

/// RGB triple with components in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpfColor {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl IpfColor {
    pub fn to_rgb8(self) -> [u8; 3] {
        let c = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        [c(self.r), c(self.g), c(self.b)]
    }
}

/// Hexagonal inverse-pole-figure colour of `sample_dir` seen from the
/// crystal frame of `q`.
///
/// The crystal direction is folded into the 6/mmm standard triangle
/// (polar angle θ ∈ [0°, 90°], azimuth φ ∈ [0°, 30°] from a1) and coloured
/// with [0001] red, [10-10] green (φ = 30°) and [2-1-10] blue (φ = 0°),
/// scaled so the largest channel is 1.
pub fn ipf_color(q: Quat, sample_dir: [f64; 3]) -> IpfColor {
    let h = q.rotate(sample_dir);
    let (x, y, z) = (h[0], h[1], h[2].abs());
    let rho = (x * x + y * y).sqrt();
    let theta = rho.atan2(z).clamp(0.0, PI / 2.0);
    let mut phi = y.atan2(x).rem_euclid(PI / 3.0);
    if phi > PI / 6.0 {
        phi = PI / 3.0 - phi;
    }
    let t = theta / (PI / 2.0);
    let f = (phi / (PI / 6.0)).clamp(0.0, 1.0);
    let (r, g, b) = (1.0 - t, t * f, t * (1.0 - f));
    let m = r.max(g).max(b);
    IpfColor {
        r: (r / m).clamp(0.0, 1.0),
        g: (g / m).clamp(0.0, 1.0),
        b: (b / m).clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_axis_along_direction_is_red() {
        let c = ipf_color(Quat::IDENTITY, [0.0, 0.0, 1.0]);
        assert_eq!(c, IpfColor { r: 1.0, g: 0.0, b: 0.0 });
        assert_eq!(c.to_rgb8(), [255, 0, 0]);
    }

    #[test]
    fn basal_vertices() {
        let blue = ipf_color(Quat::IDENTITY, [1.0, 0.0, 0.0]);
        assert!(blue.b == 1.0 && blue.r.abs() < 1e-12 && blue.g.abs() < 1e-12);
        let d = [(PI / 6.0).cos(), (PI / 6.0).sin(), 0.0];
        let green = ipf_color(Quat::IDENTITY, d);
        assert!((green.g - 1.0).abs() < 1e-12 && green.r.abs() < 1e-12 && green.b < 1e-12);
    }
}
