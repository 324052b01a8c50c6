//! Cross-checks the Jacobi SVD and polar factor against nalgebra.

use matmuon::linalg::{polar_factor, svd, Matrix};
use matmuon::problems::Xoshiro256pp;
use nalgebra::DMatrix;

fn random(rng: &mut Xoshiro256pp, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, rng.normals(rows * cols)).unwrap()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn singular_values_match_nalgebra() {
    let mut rng = Xoshiro256pp::seed_from_u64(2024);
    for _ in 0..300 {
        let (r, c) = (1 + rng.index(24), 1 + rng.index(24));
        let m = random(&mut rng, r, c);
        let ours = svd(&m).unwrap().sigma;
        let mut theirs: Vec<f64> = to_na(&m).svd(false, false).singular_values.iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(ours.len(), theirs.len());
        let scale = theirs[0].max(1.0);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() <= 1e-11 * scale, "{r}x{c}: {a} vs {b}");
        }
    }
}

#[test]
fn polar_factor_matches_nalgebra() {
    let mut rng = Xoshiro256pp::seed_from_u64(7);
    for _ in 0..100 {
        let (r, c) = (2 + rng.index(12), 2 + rng.index(12));
        let m = random(&mut rng, r, c);
        let na = to_na(&m).svd(true, true);
        let expected = na.u.unwrap() * na.v_t.unwrap();
        let ours = polar_factor(&m).unwrap();
        for i in 0..r {
            for j in 0..c {
                assert!((ours[(i, j)] - expected[(i, j)]).abs() < 1e-9, "{r}x{c} at ({i},{j})");
            }
        }
    }
}
