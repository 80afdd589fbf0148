//! Laplacian eigenvector positional encodings for complete event graphs.
//!
//! For the complete graph `K_n` the symmetric normalized Laplacian is
//! `I − (J − I)/(n−1)`: eigenvalue 0 on the constant vector and `n/(n−1)` with
//! multiplicity `n−1` on its orthogonal complement. The degenerate eigenspace
//! has no canonical basis, so one is fixed by Gram–Schmidt over the standard
//! basis vectors projected onto that complement, in index order.

use rand::Rng as _;

use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    /// `n × d_pe`, one unit-norm eigenvector per column.
    pub vectors: Tensor,
    pub eigenvalues: Vec<f64>,
}

/// Dense `L_sym = I − D^{-1/2} A D^{-1/2}` of the unweighted complete graph.
pub fn complete_graph_laplacian(n: usize) -> Tensor {
    assert!(n >= 2);
    let off = -1.0 / (n - 1) as f64;
    let mut l = Tensor::filled(n, n, off);
    for i in 0..n {
        l.set(i, i, 1.0);
    }
    l
}

/// The `d_pe` lowest non-trivial eigenvectors of `K_n`'s normalized Laplacian.
///
/// # Panics
/// If `n_nodes < d_pe + 1`.
pub fn laplacian_pe(n_nodes: usize, d_pe: usize) -> PositionalEncoding {
    assert!(
        n_nodes > d_pe,
        "need n_nodes >= d_pe + 1 (got {n_nodes}, {d_pe})"
    );
    let n = n_nodes;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d_pe);
    for j in 0..n {
        if basis.len() == d_pe {
            break;
        }
        let mut v: Vec<f64> = (0..n)
            .map(|i| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64)
            .collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut data = vec![0.0; n * d_pe];
    for (c, b) in basis.iter().enumerate() {
        for (r, x) in b.iter().enumerate() {
            data[r * d_pe + c] = *x;
        }
    }
    PositionalEncoding {
        vectors: Tensor::matrix(n, d_pe, data).expect("finite basis"),
        eigenvalues: vec![n as f64 / (n - 1) as f64; d_pe],
    }
}

/// Flips the sign of each column independently with probability 1/2.
pub fn flip_signs(pe: &mut Tensor, rng: &mut Rng) {
    let cols = pe.cols();
    let flips: Vec<bool> = (0..cols).map(|_| rng.random::<bool>()).collect();
    for r in 0..pe.rows() {
        for (c, &flip) in flips.iter().enumerate() {
            if flip {
                pe.set(r, c, -pe.get(r, c));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn oracle_eigenvalues(n: usize) -> Vec<f64> {
        let l = complete_graph_laplacian(n);
        let m = DMatrix::from_row_slice(n, n, l.data());
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    #[test]
    fn complete_graph_spectra_match_dense_solver() {
        for (n, expected) in [(6, 1.2), (7, 7.0 / 6.0)] {
            let ev = oracle_eigenvalues(n);
            assert!(ev[0].abs() < 1e-12);
            for &v in &ev[1..] {
                assert!((v - expected).abs() < 1e-12, "n={n}: {v}");
            }
            let pe = laplacian_pe(n, 4);
            for &v in &pe.eigenvalues {
                assert!((v - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn columns_are_orthonormal_eigenvectors() {
        for n in [6, 7] {
            let pe = laplacian_pe(n, 4);
            let v = &pe.vectors;
            let gram = v.transpose().matmul(v).unwrap();
            assert!(gram.max_abs_diff(&Tensor::identity(4)) < 1e-10);
            let lv = complete_graph_laplacian(n).matmul(v).unwrap();
            for c in 0..4 {
                for r in 0..n {
                    let expected = pe.eigenvalues[c] * v.get(r, c);
                    assert!((lv.get(r, c) - expected).abs() < 1e-9);
                }
                // orthogonal to the trivial constant eigenvector
                let s: f64 = (0..n).map(|r| v.get(r, c)).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_is_deterministic() {
        assert_eq!(laplacian_pe(7, 4), laplacian_pe(7, 4));
    }

    #[test]
    fn sign_flips_preserve_eigenvectors() {
        let mut rng = crate::seeded_rng(4);
        let pe = laplacian_pe(6, 4);
        let mut flipped = pe.vectors.clone();
        flip_signs(&mut flipped, &mut rng);
        for c in 0..4 {
            let same = (0..6).all(|r| flipped.get(r, c) == pe.vectors.get(r, c));
            let neg = (0..6).all(|r| flipped.get(r, c) == -pe.vectors.get(r, c));
            assert!(same || neg);
        }
    }
}
