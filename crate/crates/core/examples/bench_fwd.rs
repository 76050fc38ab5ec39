use ambigram_core::denoiser::{init_denoiser, DenoiserConfig, DropoutRate, Mode, NoisePredictor};
use ambigram_core::label::ClassLabel;
use ambigram_core::nn::Grads;
use ndarray::Array2;
use std::time::Instant;

fn main() {
    let cfg = DenoiserConfig {
        image_size: 32,
        base_channels: 16,
        channel_multipliers: vec![1, 2],
        attention_resolutions: vec![],
        num_res_blocks: 1,
        embedding_dim: 64,
        num_classes: 4,
        dropout: DropoutRate(0.0),
    };
    let model = init_denoiser(&cfg, 0).unwrap();
    println!("params: {}", model.param_count());
    let x = Array2::from_shape_fn((32, 32), |(i, j)| ((i * 31 + j) % 7) as f64 * 0.1 - 0.3);

    let n = 20;
    let t0 = Instant::now();
    for i in 0..n {
        let _ = model.predict(&x, 1 + i % 200, ClassLabel::Class(0)).unwrap();
    }
    let fwd = t0.elapsed().as_secs_f64() / n as f64;
    println!("fwd eval: {:.2} ms", fwd * 1e3);

    let mut grads = Grads::zeros_like(&model.params);
    let t0 = Instant::now();
    for i in 0..n {
        let (y, trace) = model.forward(&x, 1 + i % 200, ClassLabel::Class(0), Mode::Eval).unwrap();
        let g = y.mapv(|v| 2.0 * v / 1024.0);
        model.backward(&trace, &g, &mut grads);
    }
    let fb = t0.elapsed().as_secs_f64() / n as f64;
    println!("fwd+bwd: {:.2} ms", fb * 1e3);
    println!("pretrain 5k steps batch 4 est: {:.1} min", 5000.0 * 4.0 * fb / 60.0);
    println!("finetune 5k steps batch 4 est: {:.1} min", 5000.0 * 8.0 * fb / 60.0);
}
