//! Forward and inverse 8x8 2-D DCT-II.
//!
//! Two evaluation paths are provided and tested against each other:
//!
//! - the direct matrix form `Z = C X C^T` / `X = C^T Z C`, which is the
//!   reference for everything else, and
//! - a factorized path that splits each 8x8 product into 4x4 products using
//!   the even/odd symmetry of the transform matrix, mirroring the
//!   constant-coefficient-multiplier datapath of the modeled hardware. The
//!   factorized inverse accepts a per-coefficient skip mask so zero
//!   coefficients contribute no multiplies.
//!
//! Scaling is orthonormal: the 1/sqrt(2) compensation of the first basis row
//! is folded into `C`, so forward and inverse are exact transposes.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::types::Block8;

/// Orthonormal 8x8 DCT-II transform matrix.
#[derive(Debug, Clone)]
pub struct DctMatrix {
    pub c: [[f64; 8]; 8],
}

impl DctMatrix {
    pub fn new() -> Self {
        let mut c = [[0.0; 8]; 8];
        for (k, row) in c.iter_mut().enumerate() {
            let s = if k == 0 {
                1.0 / (2.0 * 2.0_f64.sqrt())
            } else {
                0.5
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = s * (PI * (n as f64 + 0.5) * k as f64 / 8.0).cos();
            }
        }
        DctMatrix { c }
    }
}

impl Default for DctMatrix {
    fn default() -> Self {
        Self::new()
    }
}

/// The seven distinct cosine magnitudes appearing in the transform matrix.
#[derive(Debug, Clone, Copy)]
pub struct DctConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
}

impl DctConstants {
    pub fn new() -> Self {
        DctConstants {
            a: 0.5 * (PI / 4.0).cos(),
            b: 0.5 * (PI / 16.0).cos(),
            c: 0.5 * (3.0 * PI / 16.0).cos(),
            d: 0.5 * (5.0 * PI / 16.0).cos(),
            e: 0.5 * (7.0 * PI / 16.0).cos(),
            f: 0.5 * (PI / 8.0).cos(),
            g: 0.5 * (3.0 * PI / 8.0).cos(),
        }
    }
}

impl Default for DctConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// Constant matrices of the 4x4 factorization: `q` gathers even-indexed
/// rows into the top half, `p` is the 4x4 order reversal, `ce`/`co` hold the
/// even/odd coefficient rows of the transform matrix.
#[derive(Debug, Clone)]
pub struct FastDctConstants {
    pub q: [[u8; 8]; 8],
    pub p: [[u8; 4]; 4],
    pub ce: [[f64; 4]; 4],
    pub co: [[f64; 4]; 4],
}

/// Row/column gather order realized by `q`: even indices first.
pub const EVEN_ODD_PERM: [usize; 8] = [0, 2, 4, 6, 1, 3, 5, 7];

impl FastDctConstants {
    pub fn new() -> Self {
        let k = DctConstants::new();
        let mut q = [[0u8; 8]; 8];
        for (i, &src) in EVEN_ODD_PERM.iter().enumerate() {
            q[i][src] = 1;
        }
        let mut p = [[0u8; 4]; 4];
        for (i, row) in p.iter_mut().enumerate() {
            row[3 - i] = 1;
        }
        let (a, b, c, d, e, f, g) = (k.a, k.b, k.c, k.d, k.e, k.f, k.g);
        let ce = [
            [a, a, a, a],
            [f, g, -g, -f],
            [a, -a, -a, a],
            [g, -f, f, -g],
        ];
        let co = [
            [b, c, d, e],
            [c, -e, -b, -d],
            [d, -b, e, c],
            [e, -d, c, -b],
        ];
        FastDctConstants { q, p, ce, co }
    }
}

impl Default for FastDctConstants {
    fn default() -> Self {
        Self::new()
    }
}

fn dct_matrix() -> &'static DctMatrix {
    static M: OnceLock<DctMatrix> = OnceLock::new();
    M.get_or_init(DctMatrix::new)
}

fn fast_constants() -> &'static FastDctConstants {
    static M: OnceLock<FastDctConstants> = OnceLock::new();
    M.get_or_init(FastDctConstants::new)
}

fn mat8_mul(a: &[[f64; 8]; 8], b: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut out = [[0.0; 8]; 8];
    for i in 0..8 {
        for k in 0..8 {
            let aik = a[i][k];
            for j in 0..8 {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn transpose8(m: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            t[j][i] = m[i][j];
        }
    }
    t
}

/// Forward transform by the literal matrix product `C X C^T`. Reference for
/// the factorized path.
pub fn dct2_direct(x: &Block8) -> Block8 {
    let c = &dct_matrix().c;
    let ct = transpose8(c);
    Block8(mat8_mul(&mat8_mul(c, &x.0), &ct))
}

/// Inverse transform by the literal matrix product `C^T Z C`.
pub fn idct2_direct(z: &Block8) -> Block8 {
    let c = &dct_matrix().c;
    let ct = transpose8(c);
    Block8(mat8_mul(&mat8_mul(&ct, &z.0), c))
}

/// Forward transform evaluated as a raw double cosine sum with the
/// orthonormal scale factors. Independent of [`DctMatrix`]; used to
/// cross-check both matrix paths.
pub fn dct2_double_sum(x: &Block8) -> Block8 {
    let scale = |k: usize| -> f64 {
        if k == 0 {
            1.0 / (2.0 * 2.0_f64.sqrt())
        } else {
            0.5
        }
    };
    Block8::from_fn(|k1, k2| {
        let mut sum = 0.0;
        for n1 in 0..8 {
            for n2 in 0..8 {
                sum += x.get(n1, n2)
                    * (PI * (2.0 * n1 as f64 + 1.0) * k1 as f64 / 16.0).cos()
                    * (PI * (2.0 * n2 as f64 + 1.0) * k2 as f64 / 16.0).cos();
            }
        }
        scale(k1) * scale(k2) * sum
    })
}

type M4 = [[f64; 4]; 4];

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let aik = a[i][k];
            for j in 0..4 {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn m4_add(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[i][j] + b[i][j];
        }
    }
    out
}

fn m4_sub(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[i][j] - b[i][j];
        }
    }
    out
}

fn m4_transpose(a: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[j][i] = a[i][j];
        }
    }
    out
}

/// Left-multiplication by the reversal matrix: rows in reverse order.
fn rev_rows(a: &M4) -> M4 {
    [a[3], a[2], a[1], a[0]]
}

/// Right-multiplication by the reversal matrix: columns in reverse order.
fn rev_cols(a: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[i][3 - j];
        }
    }
    out
}

fn quadrant(x: &[[f64; 8]; 8], row0: usize, col0: usize) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = x[row0 + i][col0 + j];
        }
    }
    out
}

fn place_quadrant(dst: &mut [[f64; 8]; 8], src: &M4, row0: usize, col0: usize) {
    for i in 0..4 {
        for j in 0..4 {
            dst[row0 + i][col0 + j] = src[i][j];
        }
    }
}

/// Forward transform via the 4x4 factorization.
///
/// The input is split into quadrants; top/bottom sums and differences feed
/// the even/odd coefficient matrices, and the result is scattered back
/// through the even/odd row permutation. Matches [`dct2_direct`] to within
/// f64 rounding.
pub fn dct2_fast(x: &Block8) -> Block8 {
    let fc = fast_constants();

    let lu = quadrant(&x.0, 0, 0);
    let ru = quadrant(&x.0, 0, 4);
    let ld = quadrant(&x.0, 4, 0);
    let rd = quadrant(&x.0, 4, 4);

    // Column pass: fold the reversed bottom half into the top half.
    let y1 = m4_mul(&fc.ce, &m4_add(&lu, &rev_rows(&ld)));
    let y2 = m4_mul(&fc.ce, &m4_add(&ru, &rev_rows(&rd)));
    let y3 = m4_mul(&fc.co, &m4_sub(&lu, &rev_rows(&ld)));
    let y4 = m4_mul(&fc.co, &m4_sub(&ru, &rev_rows(&rd)));

    // Row pass: fold the reversed right half into the left half.
    let ce_t = m4_transpose(&fc.ce);
    let co_t = m4_transpose(&fc.co);
    let z_lu = m4_mul(&m4_add(&y1, &rev_cols(&y2)), &ce_t);
    let z_ru = m4_mul(&m4_sub(&y1, &rev_cols(&y2)), &co_t);
    let z_ld = m4_mul(&m4_add(&y3, &rev_cols(&y4)), &ce_t);
    let z_rd = m4_mul(&m4_sub(&y3, &rev_cols(&y4)), &co_t);

    // Scatter: position (i, j) of the packed result is coefficient
    // (perm[i], perm[j]) of the natural-order output.
    let mut z = [[0.0; 8]; 8];
    let mut packed = [[0.0; 8]; 8];
    place_quadrant(&mut packed, &z_lu, 0, 0);
    place_quadrant(&mut packed, &z_ru, 0, 4);
    place_quadrant(&mut packed, &z_ld, 4, 0);
    place_quadrant(&mut packed, &z_rd, 4, 4);
    for i in 0..8 {
        for j in 0..8 {
            z[EVEN_ODD_PERM[i]][EVEN_ODD_PERM[j]] = packed[i][j];
        }
    }
    Block8(z)
}

/// Inverse transform via the same factorization, all coefficients active.
pub fn idct2_fast(z: &Block8) -> Block8 {
    idct2_fast_masked(z, u64::MAX).0
}

/// Inverse transform with a per-coefficient skip mask.
///
/// Bit `8*i + j` of `mask` marks coefficient `(i, j)` as present; cleared
/// bits are treated as exact zeros and their multipliers stay off. Returns
/// the spatial block and the number of multiplier activations performed
/// (zero when the mask is empty). When the mask matches the true zero
/// pattern of `z` the output is identical to the unmasked transform.
pub fn idct2_fast_masked(z: &Block8, mask: u64) -> (Block8, u64) {
    if mask == 0 {
        return (Block8::zero(), 0);
    }
    let fc = fast_constants();

    let mut zm = [[0.0; 8]; 8];
    let mut active = 0u64;
    for (i, row) in zm.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if mask & (1u64 << (8 * i + j)) != 0 {
                *v = z.get(i, j);
                active += 1;
            }
        }
    }
    // Column pass touches 8 constants per present coefficient; the row pass
    // runs dense on the intermediate, which carries no occupancy index.
    let mults = 8 * active + 512;

    // Gather even/odd rows and columns into the packed layout.
    let mut packed = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            packed[i][j] = zm[EVEN_ODD_PERM[i]][EVEN_ODD_PERM[j]];
        }
    }
    let z1 = quadrant(&packed, 0, 0);
    let z2 = quadrant(&packed, 0, 4);
    let z3 = quadrant(&packed, 4, 0);
    let z4 = quadrant(&packed, 4, 4);

    let ce_t = m4_transpose(&fc.ce);
    let co_t = m4_transpose(&fc.co);
    let a1 = m4_mul(&ce_t, &z1);
    let a2 = m4_mul(&ce_t, &z2);
    let b1 = m4_mul(&co_t, &z3);
    let b2 = m4_mul(&co_t, &z4);

    let u1 = m4_add(&a1, &b1);
    let u2 = m4_add(&a2, &b2);
    let v1 = m4_sub(&a1, &b1);
    let v2 = m4_sub(&a2, &b2);

    let g1 = m4_mul(&u1, &fc.ce);
    let g2 = m4_mul(&u2, &fc.co);
    let h1 = m4_mul(&v1, &fc.ce);
    let h2 = m4_mul(&v2, &fc.co);

    let mut x = [[0.0; 8]; 8];
    place_quadrant(&mut x, &m4_add(&g1, &g2), 0, 0);
    place_quadrant(&mut x, &rev_cols(&m4_sub(&g1, &g2)), 0, 4);
    place_quadrant(&mut x, &rev_rows(&m4_add(&h1, &h2)), 4, 0);
    place_quadrant(&mut x, &rev_rows(&rev_cols(&m4_sub(&h1, &h2))), 4, 4);
    (Block8(x), mults)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_block(rng: &mut StdRng) -> Block8 {
        Block8::from_fn(|_, _| rng.random_range(-128.0..128.0))
    }

    #[test]
    fn matrix_first_row_is_uniform() {
        let m = DctMatrix::new();
        for j in 0..8 {
            assert!((m.c[0][j] - 0.3535533906).abs() < 1e-9);
        }
        assert!((m.c[1][0] - 0.4903926402).abs() < 1e-9);
    }

    #[test]
    fn odd_rows_sum_to_zero() {
        let m = DctMatrix::new();
        for k in (1..8).step_by(2) {
            let s: f64 = m.c[k].iter().sum();
            assert!(s.abs() < 1e-12, "row {k} sums to {s}");
        }
    }

    #[test]
    fn matrix_is_orthonormal() {
        let m = DctMatrix::new();
        let prod = mat8_mul(&m.c, &transpose8(&m.c));
        for i in 0..8 {
            for j in 0..8 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (prod[i][j] - expect).abs() < 1e-12,
                    "C*C^T differs from identity at ({i},{j}): {}",
                    prod[i][j]
                );
            }
        }
    }

    #[test]
    fn gather_and_reversal_matrices_are_permutations() {
        let fc = FastDctConstants::new();
        for i in 0..8 {
            assert_eq!(fc.q[i].iter().map(|&v| v as u32).sum::<u32>(), 1);
            assert_eq!((0..8).map(|r| fc.q[r][i] as u32).sum::<u32>(), 1);
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(fc.p[i][j], u8::from(j == 3 - i));
            }
        }
        // Expected gather pattern: even source rows first, then odd.
        let expected_q: [[u8; 8]; 8] = [
            [1, 0, 0, 0, 0, 0, 0, 0],
            [0, 0, 1, 0, 0, 0, 0, 0],
            [0, 0, 0, 0, 1, 0, 0, 0],
            [0, 0, 0, 0, 0, 0, 1, 0],
            [0, 1, 0, 0, 0, 0, 0, 0],
            [0, 0, 0, 1, 0, 0, 0, 0],
            [0, 0, 0, 0, 0, 1, 0, 0],
            [0, 0, 0, 0, 0, 0, 0, 1],
        ];
        assert_eq!(fc.q, expected_q);
    }

    #[test]
    fn coefficient_matrices_match_transform_rows() {
        let m = DctMatrix::new();
        let fc = FastDctConstants::new();
        for r in 0..4 {
            for c in 0..4 {
                assert!((fc.ce[r][c] - m.c[2 * r][c]).abs() < 1e-15);
                assert!((fc.co[r][c] - m.c[2 * r + 1][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn direct_zero_maps_to_zero() {
        let z = dct2_direct(&Block8::zero());
        assert_eq!(z.max_abs_diff(&Block8::zero()), 0.0);
    }

    #[test]
    fn direct_constant_block_concentrates_in_dc() {
        let z = dct2_direct(&Block8::constant(3.25));
        assert!((z.get(0, 0) - 8.0 * 3.25).abs() < 1e-12);
        for i in 0..8 {
            for j in 0..8 {
                if (i, j) != (0, 0) {
                    assert!(z.get(i, j).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn direct_matches_double_sum() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let x = random_block(&mut rng);
            let a = dct2_direct(&x);
            let b = dct2_double_sum(&x);
            assert!(a.max_abs_diff(&b) < 1e-9);
        }
    }

    #[test]
    fn direct_preserves_energy() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..1000 {
            let x = random_block(&mut rng);
            let z = dct2_direct(&x);
            let nx = x.frobenius_norm();
            let nz = z.frobenius_norm();
            assert!((nx - nz).abs() <= 1e-9 * nx.max(1.0));
        }
    }

    #[test]
    fn inverse_recovers_dc_constant() {
        let mut z = Block8::zero();
        z.set(0, 0, 8.0);
        let x = idct2_direct(&z);
        assert!(x.max_abs_diff(&Block8::constant(1.0)) < 1e-12);
    }

    #[test]
    fn direct_roundtrip() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..1000 {
            let x = random_block(&mut rng);
            let back = idct2_direct(&dct2_direct(&x));
            assert!(back.max_abs_diff(&x) < 1e-9);
        }
    }

    #[test]
    fn fast_matches_direct() {
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..1000 {
            let x = random_block(&mut rng);
            let fast = dct2_fast(&x);
            let direct = dct2_direct(&x);
            assert!(fast.max_abs_diff(&direct) < 1e-9);
        }
    }

    #[test]
    fn fast_constant_block() {
        let z = dct2_fast(&Block8::constant(-2.0));
        assert!((z.get(0, 0) + 16.0).abs() < 1e-12);
    }

    #[test]
    fn fast_paths_map_zero_to_zero() {
        let zero = Block8::zero();
        assert_eq!(dct2_fast(&zero).max_abs_diff(&zero), 0.0);
        assert_eq!(idct2_fast(&zero).max_abs_diff(&zero), 0.0);
    }

    #[test]
    fn fast_inverse_roundtrip() {
        let mut rng = StdRng::seed_from_u64(15);
        for _ in 0..10_000 {
            let x = random_block(&mut rng);
            let z = dct2_fast(&x);
            let back = idct2_fast(&z);
            assert!(back.max_abs_diff(&x) < 1e-9);
            // Energy is conserved in both directions.
            let (nx, nz, nb) = (x.frobenius_norm(), z.frobenius_norm(), back.frobenius_norm());
            assert!((nx - nz).abs() <= 1e-9 * nx.max(1.0));
            assert!((nz - nb).abs() <= 1e-9 * nz.max(1.0));
        }
    }

    #[test]
    fn transform_is_linear() {
        let mut rng = StdRng::seed_from_u64(16);
        for _ in 0..100 {
            let x = random_block(&mut rng);
            let y = random_block(&mut rng);
            let (alpha, beta) = (1.75, -0.5);
            let combo = Block8::from_fn(|i, j| alpha * x.get(i, j) + beta * y.get(i, j));
            let lhs = dct2_fast(&combo);
            let zx = dct2_fast(&x);
            let zy = dct2_fast(&y);
            let rhs = Block8::from_fn(|i, j| alpha * zx.get(i, j) + beta * zy.get(i, j));
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
    }

    #[test]
    fn empty_mask_short_circuits() {
        let mut rng = StdRng::seed_from_u64(17);
        let z = random_block(&mut rng);
        let (out, mults) = idct2_fast_masked(&z, 0);
        assert_eq!(mults, 0);
        assert_eq!(out.max_abs_diff(&Block8::zero()), 0.0);
    }

    #[test]
    fn mask_matching_zero_pattern_changes_nothing() {
        let mut rng = StdRng::seed_from_u64(18);
        for _ in 0..100 {
            // Sparse coefficient block with exact zeros.
            let mut z = Block8::zero();
            let mut mask = 0u64;
            for _ in 0..10 {
                let i = rng.random_range(0..8);
                let j = rng.random_range(0..8);
                z.set(i, j, rng.random_range(-50.0..50.0));
            }
            for i in 0..8 {
                for j in 0..8 {
                    if z.get(i, j) != 0.0 {
                        mask |= 1 << (8 * i + j);
                    }
                }
            }
            let unmasked = idct2_fast(&z);
            let (masked, _) = idct2_fast_masked(&z, mask);
            assert_eq!(masked.0, unmasked.0);
        }
    }
}
