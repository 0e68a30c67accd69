//! Score, decode and compute marginals with a linear-chain CRF over
//! hand-written emission scores.

use ita::crf::{self, CrfParams};
use ndarray::array;

fn main() -> ita::Result<()> {
    // Labels: 0 = O, 1 = B-PER, 2 = E-PER.
    let emissions = array![[0.2, 1.5, 0.1], [0.3, 0.2, 1.1], [1.4, 0.1, 0.0]];
    let mut params = CrfParams::zeros(3);
    params.transitions[[1, 2]] = 1.0;
    params.transitions[[0, 2]] = -3.0;
    params.start[2] = -3.0;

    let (path, best) = crf::viterbi(emissions.view(), &params)?;
    println!("best path {path:?} score {best:.4}");
    println!("log Z {:.4}", crf::log_partition(emissions.view(), &params)?);
    println!("nll of best path {:.4}", crf::nll(emissions.view(), &params, &path)?);
    let marginals = crf::posterior_marginals(emissions.view(), &params)?;
    for (i, row) in marginals.0.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        println!("position {i}: {}", cells.join(" "));
    }
    Ok(())
}
