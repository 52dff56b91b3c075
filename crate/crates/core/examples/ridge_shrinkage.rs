//! Ridge shrinkage of a block error covariance toward its diagonal.

use gpcca::ridge::{correlation_decompose, ridge_covariance};
use gpcca::BlockSpd;
use nalgebra::{dmatrix, SymmetricEigen};

fn main() -> gpcca::Result<()> {
    let psi = BlockSpd::new(vec![
        dmatrix![2.0, 1.9; 1.9, 2.0],
        dmatrix![1.0, 0.5, 0.2; 0.5, 1.0, 0.5; 0.2, 0.5, 1.0],
    ])?;
    let (_, r) = correlation_decompose(&psi)?;
    println!("error correlation within modality 0: {:.3}", r.blocks()[0][(0, 1)]);

    for lambda in [1.0, 2.0 / 3.0, 0.5, 0.25] {
        let ridged = ridge_covariance(&psi, lambda)?;
        let b = &ridged.blocks()[0];
        let eig = SymmetricEigen::new(b.clone()).eigenvalues;
        println!(
            "λ = {lambda:.3}: correlation {:.3}, condition number {:.1}",
            b[(0, 1)] / (b[(0, 0)] * b[(1, 1)]).sqrt(),
            eig.max() / eig.min()
        );
    }
    Ok(())
}
