use antidistill::checkpoint::load_checkpoint;
use antidistill::data::synthetic_blobs;
use antidistill::rng::derive_seed;
use antidistill::Matrix;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = &args[1];
    let seed: u64 = args[2].parse().unwrap();
    let sep: f64 = args[3].parse().unwrap();
    let eval = synthetic_blobs(derive_seed(seed, "blobs-eval", 0), 1000, 10, 2, sep).unwrap();

    // per replica: component logits on eval
    let mut comp_logits: Vec<Vec<Matrix>> = Vec::new();
    for r in 0..4 {
        let path = format!("{dir}/checkpoints/replica_{r:03}.ckpt");
        let (model, _) = load_checkpoint(std::path::Path::new(&path)).unwrap();
        let logits: Vec<Matrix> = model
            .components()
            .iter()
            .map(|c| c.forward_logits(&eval.features).unwrap())
            .collect();
        comp_logits.push(logits);
    }
    let n = 1000usize;
    // within-replica correlation of logit columns between components (per label, avg over replicas)
    for label in 0..2 {
        let mut corr_sum = 0.0;
        for r in 0..4 {
            let z1 = comp_logits[r][0].column(label);
            let z2 = comp_logits[r][1].column(label);
            let dot: f64 = z1.iter().zip(&z2).map(|(a, b)| a * b).sum();
            let n1: f64 = z1.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n2: f64 = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
            corr_sum += dot / (n1 * n2);
        }
        println!("label {label}: mean cosine(z1,z2) over replicas = {:.4}", corr_sum / 4.0);
    }
    // dispersion across replicas: of per-component logits and of ensemble-mean logits
    let mut comp_disp = 0.0;
    let mut mean_disp = 0.0;
    for i in 0..n {
        for label in 0..2 {
            // component 0 dispersion
            let vals: Vec<f64> = (0..4).map(|r| comp_logits[r][0].get(i, label)).collect();
            let m = vals.iter().sum::<f64>() / 4.0;
            comp_disp += vals.iter().map(|v| (v - m).abs()).sum::<f64>() / 4.0;
            // ensemble mean logit dispersion
            let means: Vec<f64> = (0..4)
                .map(|r| {
                    (comp_logits[r][0].get(i, label) + comp_logits[r][1].get(i, label)) / 2.0
                })
                .collect();
            let mm = means.iter().sum::<f64>() / 4.0;
            mean_disp += means.iter().map(|v| (v - mm).abs()).sum::<f64>() / 4.0;
        }
    }
    println!("component-0 logit dispersion: {:.5}", comp_disp / (n * 2) as f64);
    println!("ensemble-mean logit dispersion: {:.5}", mean_disp / (n * 2) as f64);
    // logit magnitude scale
    let scale: f64 = comp_logits[0][0].as_slice().iter().map(|v| v.abs()).sum::<f64>()
        / (n * 2) as f64;
    println!("mean |logit| component0 replica0: {:.4}", scale);
}
