//! Random-walk kernel between attributed graphs.

use ndarray::array;
use urbanprompt::prompt::{binary_adjacency, rw_kernel, soft_adjacency, AttributedGraph};

fn main() -> urbanprompt::Result<()> {
    let path = AttributedGraph::new(
        array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
        array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
    )?;
    let edge = AttributedGraph::new(array![[1.0, 0.5], [0.5, 1.0]], array![[0.0, 1.0], [1.0, 0.0]])?;

    for steps in 0..=3 {
        let lambda = vec![1.0; steps + 1];
        let k12 = rw_kernel(&path, &edge, steps, &lambda)?;
        let k21 = rw_kernel(&edge, &path, steps, &lambda)?;
        println!("P={steps}: K(path, edge) = {k12:.4}  K(edge, path) = {k21:.4}");
    }
    let decay = [1.0, 0.5, 0.25];
    println!("decayed: {:.4}", rw_kernel(&path, &path, 2, &decay)?);

    let logits = array![[0.0, 3.0, -3.0], [1.0, 0.0, 0.0], [-2.0, 0.5, 0.0]];
    println!("soft adjacency\n{:.3}", soft_adjacency(&logits));
    println!("binary adjacency\n{}", binary_adjacency(&logits));
    Ok(())
}
