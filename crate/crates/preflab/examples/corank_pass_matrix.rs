//! Bidirectional solution/test co-ranking over a pass matrix.
//!
//! Solutions score points for the tests they pass; tests score points for
//! the solutions they trip. Starting from all-ones scores, damped Jacobi
//! iterations separate strong solutions (pass hard tests) from weak ones,
//! and the highest/lowest scorers become a preference pair.
//!
//! Run with: cargo run --example corank_pass_matrix

use preflab::corank::{corank, select_extremes, Extremes, PassMatrix};

fn print_state(pm: &PassMatrix, damping: f64, iterations: usize) {
    let st = corank(pm, damping, iterations).unwrap();
    println!("after {iterations} iteration(s) at damping {damping}:");
    for (i, v) in st.s.iter().enumerate() {
        let row: Vec<String> = (0..pm.tests())
            .map(|j| pm.passed(i, j).to_string())
            .collect();
        println!("  solution {i} [{}]  score {v:.4}", row.join(" "));
    }
    let t: Vec<String> = st.t.iter().map(|v| format!("{v:.4}")).collect();
    println!("  test scores: [{}]", t.join(", "));
    match select_extremes(&st).unwrap() {
        Extremes::Separated { best, worst } => {
            println!("  preference pair: solution {best} over solution {worst}")
        }
        Extremes::NoSeparation => println!("  all solutions tie; nothing to select"),
    }
}

fn main() {
    // The worked example: solution 0 passes both tests, solution 2 passes
    // none. One iteration at damping 0.5 gives s = (1.5, 1.0, 0.5) and
    // t = (0.8, 1.2): the second test failed more solutions, so it scores
    // higher.
    let small = PassMatrix::from_rows(vec![vec![1, 1], vec![1, 0], vec![0, 0]]).unwrap();
    print_state(&small, 0.5, 1);
    println!();

    // A larger instance at the usual damping, run to the default depth.
    let pm = PassMatrix::from_rows(vec![
        vec![1, 0, 1, 0, 0, 1],
        vec![1, 0, 0, 0, 1, 1],
        vec![0, 0, 1, 0, 1, 1],
        vec![0, 1, 0, 1, 0, 0],
        vec![1, 0, 1, 0, 1, 1],
        vec![1, 1, 1, 0, 0, 1],
        vec![0, 0, 0, 0, 0, 0],
    ])
    .unwrap();
    print_state(&pm, 0.85, 5);
    println!();

    // A matrix where every solution passes everything has no signal.
    let flat = PassMatrix::from_rows(vec![vec![1, 1, 1]; 4]).unwrap();
    print_state(&flat, 0.85, 5);
}
