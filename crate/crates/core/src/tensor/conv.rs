//! 2D cross-correlation via im2col + matrix product.
//!
//! `conv2d_reference` is the direct six-loop form, kept as the oracle.

use super::linalg;
use super::{Real, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn same(kernel: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    groups: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn patch(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn spatial(&self) -> usize {
        self.oh * self.ow
    }
}

fn geometry(x: &[usize], k: &[usize], spec: Conv2dSpec) -> Result<Geometry, TensorError> {
    if x.len() != 4 || k.len() != 4 {
        return Err(TensorError::invalid(
            "conv2d",
            format!("expected 4-d input and kernel, got {x:?} and {k:?}"),
        ));
    }
    let (n, cin, h, w) = (x[0], x[1], x[2], x[3]);
    let (cout, cin_g, kh, kw) = (k[0], k[1], k[2], k[3]);
    let g = spec.groups;
    if g == 0 || spec.stride == 0 || cin % g != 0 || cout % g != 0 {
        return Err(TensorError::invalid(
            "conv2d",
            format!("groups {g} must divide Cin {cin} and Cout {cout} (stride {})", spec.stride),
        ));
    }
    if cin_g != cin / g {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![cout, cin / g, kh, kw],
            got: k.to_vec(),
        });
    }
    let (hp, wp) = (h + 2 * spec.padding, w + 2 * spec.padding);
    if hp < kh || wp < kw {
        return Err(TensorError::invalid(
            "conv2d",
            format!("padded input {hp}x{wp} smaller than kernel {kh}x{kw}"),
        ));
    }
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh: (hp - kh) / spec.stride + 1,
        ow: (wp - kw) / spec.stride + 1,
        groups: g,
        stride: spec.stride,
        pad: spec.padding,
    })
}

/// Unfolds one group of one image into `cols: [cin_g·kh·kw, oh·ow]`.
fn im2col<T: Real>(g: &Geometry, img: &[T], cols: &mut [T]) {
    let sp = g.spatial();
    for c in 0..g.cin_g() {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * sp;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `img` (accumulating).
fn col2im<T: Real>(g: &Geometry, cols: &[T], img: &mut [T]) {
    let sp = g.spatial();
    for c in 0..g.cin_g() {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * sp;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Grouped stride-1 convolutions with few inputs per group are run as
/// direct shifted-row loops; im2col would spend its time on tiny products.
fn use_direct(g: &Geometry) -> bool {
    g.groups > 1 && g.stride == 1 && g.patch() <= 64
}

/// Copies an `h × w` plane into the interior of a zeroed padded plane.
fn pad_plane<T: Real>(g: &Geometry, src: &[T], dst: &mut [T]) {
    let pw = g.w + 2 * g.pad;
    dst.fill(T::zero());
    for r in 0..g.h {
        let o = (r + g.pad) * pw + g.pad;
        dst[o..o + g.w].copy_from_slice(&src[r * g.w..(r + 1) * g.w]);
    }
}

/// On a padded plane with row stride `pw`, output pixel `(oy, ox)` of tap
/// `(ky, kx)` reads flat index `oy·pw + ox + ky·pw + kx`. Laying the output
/// out with the same stride turns each tap into one contiguous axpy of
/// length `flat_len`; the `pw - ow` trailing columns of each row are junk.
fn flat_len(g: &Geometry) -> usize {
    (g.oh - 1) * (g.w + 2 * g.pad) + g.ow
}

fn direct_forward<T: Real>(g: &Geometry, x: &[T], k: &[T], out: &mut [T]) {
    let pw = g.w + 2 * g.pad;
    let (cin_g, cout_g, len) = (g.cin_g(), g.cout_g(), flat_len(g));
    let mut padded = vec![T::zero(); (g.h + 2 * g.pad) * pw];
    let mut ext = vec![T::zero(); g.oh * pw];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / cout_g;
            ext.fill(T::zero());
            for ci in 0..cin_g {
                let ic = grp * cin_g + ci;
                let off = (n * g.cin + ic) * g.h * g.w;
                pad_plane(g, &x[off..off + g.h * g.w], &mut padded);
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = k[((oc * cin_g + ci) * g.kh + ky) * g.kw + kx];
                        let src = &padded[ky * pw + kx..][..len];
                        for (d, s) in ext[..len].iter_mut().zip(src) {
                            *d += wv * *s;
                        }
                    }
                }
            }
            let o = (n * g.cout + oc) * g.spatial();
            for r in 0..g.oh {
                out[o + r * g.ow..o + (r + 1) * g.ow].copy_from_slice(&ext[r * pw..r * pw + g.ow]);
            }
        }
    }
}

fn direct_backward<T: Real>(
    g: &Geometry,
    x: &[T],
    k: &[T],
    go: &[T],
    mut gx: Option<&mut Vec<T>>,
    mut gk: Option<&mut Vec<T>>,
) {
    let pw = g.w + 2 * g.pad;
    let hp = g.h + 2 * g.pad;
    let (cin_g, cout_g, len) = (g.cin_g(), g.cout_g(), flat_len(g));
    let mut padded = vec![T::zero(); hp * pw];
    let mut gpad = vec![T::zero(); hp * pw];
    // junk columns stay zero so they contribute nothing
    let mut ext = vec![T::zero(); cout_g * g.oh * pw];
    for n in 0..g.n {
        for grp in 0..g.groups {
            for co in 0..cout_g {
                let o = (n * g.cout + grp * cout_g + co) * g.spatial();
                for r in 0..g.oh {
                    let e = (co * g.oh + r) * pw;
                    ext[e..e + g.ow].copy_from_slice(&go[o + r * g.ow..o + (r + 1) * g.ow]);
                }
            }
            for ci in 0..cin_g {
                let ic = grp * cin_g + ci;
                let off = (n * g.cin + ic) * g.h * g.w;
                pad_plane(g, &x[off..off + g.h * g.w], &mut padded);
                gpad.fill(T::zero());
                for co in 0..cout_g {
                    let oc = grp * cout_g + co;
                    let e = &ext[co * g.oh * pw..][..len];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let widx = ((oc * cin_g + ci) * g.kh + ky) * g.kw + kx;
                            let s = ky * pw + kx;
                            if let Some(gk) = gk.as_deref_mut() {
                                gk[widx] += linalg::dot(e, &padded[s..s + len]);
                            }
                            if gx.is_some() {
                                let wv = k[widx];
                                for (d, v) in gpad[s..s + len].iter_mut().zip(e) {
                                    *d += wv * *v;
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx.as_deref_mut() {
                    for r in 0..g.h {
                        let src = &gpad[(r + g.pad) * pw + g.pad..][..g.w];
                        for (d, v) in gx[off + r * g.w..off + (r + 1) * g.w].iter_mut().zip(src) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x_shape: &[usize],
    x: &[T],
    k_shape: &[usize],
    k: &[T],
    spec: Conv2dSpec,
) -> Result<(Vec<usize>, Vec<T>), TensorError> {
    let g = geometry(x_shape, k_shape, spec)?;
    let (sp, patch, cout_g) = (g.spatial(), g.patch(), g.cout_g());
    let mut out = vec![T::zero(); g.n * g.cout * sp];
    if use_direct(&g) {
        direct_forward(&g, x, k, &mut out);
        return Ok((vec![g.n, g.cout, g.oh, g.ow], out));
    }
    let mut cols = vec![T::zero(); patch * sp];
    for n in 0..g.n {
        for grp in 0..g.groups {
            let img_off = (n * g.cin + grp * g.cin_g()) * g.h * g.w;
            im2col(&g, &x[img_off..img_off + g.cin_g() * g.h * g.w], &mut cols);
            let out_off = (n * g.cout + grp * cout_g) * sp;
            linalg::matmul_acc(
                &k[grp * cout_g * patch..(grp + 1) * cout_g * patch],
                &cols,
                &mut out[out_off..out_off + cout_g * sp],
                cout_g,
                patch,
                sp,
            );
        }
    }
    Ok((vec![g.n, g.cout, g.oh, g.ow], out))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x_shape: &[usize],
    x: &[T],
    k_shape: &[usize],
    k: &[T],
    grad_out: &[T],
    spec: Conv2dSpec,
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let g = geometry(x_shape, k_shape, spec).expect("shapes validated in forward");
    let (sp, patch, cout_g) = (g.spatial(), g.patch(), g.cout_g());
    let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut gk = want_k.then(|| vec![T::zero(); k.len()]);
    if use_direct(&g) {
        direct_backward(&g, x, k, grad_out, gx.as_mut(), gk.as_mut());
        return (gx, gk);
    }
    let mut cols = vec![T::zero(); patch * sp];
    for n in 0..g.n {
        for grp in 0..g.groups {
            let img_off = (n * g.cin + grp * g.cin_g()) * g.h * g.w;
            let img_len = g.cin_g() * g.h * g.w;
            let out_off = (n * g.cout + grp * cout_g) * sp;
            let go = &grad_out[out_off..out_off + cout_g * sp];
            let kg = grp * cout_g * patch..(grp + 1) * cout_g * patch;
            if let Some(gk) = gk.as_mut() {
                im2col(&g, &x[img_off..img_off + img_len], &mut cols);
                linalg::matmul_a_bt_acc(go, &cols, &mut gk[kg.clone()], cout_g, sp, patch);
            }
            if let Some(gx) = gx.as_mut() {
                cols.fill(T::zero());
                linalg::matmul_at_b_acc(&k[kg], go, &mut cols, patch, cout_g, sp);
                col2im(&g, &cols, &mut gx[img_off..img_off + img_len]);
            }
        }
    }
    (gx, gk)
}

/// Direct-loop cross-correlation, the reference for the im2col path.
pub fn conv2d_reference<T: Real>(
    x_shape: &[usize],
    x: &[T],
    k_shape: &[usize],
    k: &[T],
    spec: Conv2dSpec,
) -> Result<(Vec<usize>, Vec<T>), TensorError> {
    let g = geometry(x_shape, k_shape, spec)?;
    let mut out = vec![T::zero(); g.n * g.cout * g.oh * g.ow];
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut s = T::zero();
                    for ci in 0..cin_g {
                        let c = grp * cin_g + ci;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xi = ((n * g.cin + c) * g.h + iy as usize) * g.w + ix as usize;
                                let ki = ((co * cin_g + ci) * g.kh + ky) * g.kw + kx;
                                s += x[xi] * k[ki];
                            }
                        }
                    }
                    out[((n * g.cout + co) * g.oh + oy) * g.ow + ox] = s;
                }
            }
        }
    }
    Ok((vec![g.n, g.cout, g.oh, g.ow], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn ones_sum_to_nine() {
        let (shape, out) =
            conv2d_forward(&[1, 1, 3, 3], &[1.0f64; 9], &[1, 1, 3, 3], &[1.0; 9], Conv2dSpec::default())
                .unwrap();
        assert_eq!(shape, vec![1, 1, 1, 1]);
        assert_eq!(out, vec![9.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_vec(2 * 5 * 7, &mut rng);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let (shape, out) =
            conv2d_forward(&[2, 1, 5, 7], &x, &[1, 1, 3, 3], &k, Conv2dSpec::same(3)).unwrap();
        assert_eq!(shape, vec![2, 1, 5, 7]);
        assert_eq!(out, x);
    }

    #[test]
    fn matches_reference_with_groups_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(cin, cout, groups, stride, pad, kh, kw) in &[
            (4, 6, 1, 1, 1, 3, 3),
            (4, 8, 2, 2, 1, 3, 3),
            (6, 6, 6, 1, 2, 5, 3),
            (4, 4, 1, 1, 0, 1, 1),
            (12, 12, 3, 1, 1, 3, 3),
            (8, 16, 2, 1, 0, 3, 3),
        ] {
            let xs = [2, cin, 8, 9];
            let ks = [cout, cin / groups, kh, kw];
            let x = rand_vec(xs.iter().product(), &mut rng);
            let k = rand_vec(ks.iter().product(), &mut rng);
            let spec = Conv2dSpec {
                stride,
                padding: pad,
                groups,
            };
            let (s1, a) = conv2d_forward(&xs, &x, &ks, &k, spec).unwrap();
            let (s2, b) = conv2d_reference(&xs, &x, &ks, &k, spec).unwrap();
            assert_eq!(s1, s2);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_groups() {
        let r = conv2d_forward(
            &[1, 6, 4, 4],
            &[0.0f64; 96],
            &[4, 3, 1, 1],
            &[0.0; 12],
            Conv2dSpec::default().with_groups(4),
        );
        assert!(r.is_err());
    }

    #[test]
    fn depthwise_is_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = 3;
        let x = rand_vec(c * 6 * 6, &mut rng);
        let k = rand_vec(c * 9, &mut rng);
        let spec = Conv2dSpec::same(3).with_groups(c);
        let (_, full) = conv2d_forward(&[1, c, 6, 6], &x, &[c, 1, 3, 3], &k, spec).unwrap();
        for ch in 0..c {
            let (_, single) = conv2d_reference(
                &[1, 1, 6, 6],
                &x[ch * 36..(ch + 1) * 36],
                &[1, 1, 3, 3],
                &k[ch * 9..(ch + 1) * 9],
                Conv2dSpec::same(3),
            )
            .unwrap();
            for (a, b) in full[ch * 36..(ch + 1) * 36].iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_adjoint_identity() {
        // <conv(x,k), g> is bilinear, so its gradients must satisfy
        // <gx, x> == <gk, k> == <conv(x,k), g>.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = [2, 4, 5, 6];
        let ks = [4, 2, 3, 3];
        let x = Tensor::new(xs, rand_vec(240, &mut rng)).unwrap().with_grad();
        let k = Tensor::new(ks, rand_vec(72, &mut rng)).unwrap().with_grad();
        let spec = Conv2dSpec::same(3).with_groups(2);
        let mut t = Tape::new();
        let (xv, kv) = (t.leaf(&x), t.leaf(&k));
        let y = t.conv2d(xv, kv, spec).unwrap();
        let gw = t.constant(Tensor::new(t.shape(y).to_vec(), rand_vec(t.value(y).len(), &mut rng)).unwrap());
        let p = t.mul(y, gw).unwrap();
        let l = t.sum_all(p).unwrap();
        let grads = t.backward(l).unwrap();
        let total = t.value(l)[0];
        let dx: f64 = grads.get(xv).unwrap().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let dk: f64 = grads.get(kv).unwrap().iter().zip(k.data()).map(|(a, b)| a * b).sum();
        assert!((dx - total).abs() < 1e-10);
        assert!((dk - total).abs() < 1e-10);
    }
}
