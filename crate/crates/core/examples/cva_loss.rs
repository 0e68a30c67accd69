//! The alignment loss between the cross-modal (teacher) and text-only
//! (student) posterior marginals of the same sentence.

use ita::crf::{self, CrfParams};
use ndarray::array;

fn main() -> ita::Result<()> {
    let params = CrfParams::zeros(3);
    let teacher_em = array![[0.0, 2.5, 0.0], [0.0, 0.0, 2.5]];
    let student_em = array![[0.5, 0.6, 0.4], [0.4, 0.5, 0.7]];
    let teacher = crf::posterior_marginals(teacher_em.view(), &params)?;
    let student = crf::posterior_marginals(student_em.view(), &params)?;
    let loss = crf::cva_loss(&teacher, &student)?;
    println!("cross entropy   {:.4}", loss.cross_entropy);
    println!("teacher entropy {:.4}", loss.teacher_entropy);
    println!("KL              {:.4}", loss.kl);
    let same = crf::cva_loss(&teacher, &teacher)?;
    println!("KL against itself {:.2e}", same.kl);
    Ok(())
}
