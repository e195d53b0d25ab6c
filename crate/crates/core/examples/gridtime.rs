fn main() {
    let start = std::time::Instant::now();
    let report = antidistill::gradcheck::full_grid();
    let elapsed = start.elapsed();
    let worst = report.cells.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!("cells: {} failed: {} worst: {:.3e} elapsed: {:?}",
        report.cells.len(), report.failed_count(), worst, elapsed);
}
