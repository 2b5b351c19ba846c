use splatmark::codec::{tokenize, train_decoder, DecoderTrainConfig, MessageBits};
use splatmark::encoders::{EncoderBundle, ToyBundle};

fn main() {
    let bundle = ToyBundle::seeded(21);
    let a = MessageBits::new(vec![0, 1, 0, 1, 1, 0, 0, 1]).unwrap();
    let mut flip = a.bits().to_vec();
    flip[4] = 1 - flip[4];
    let b = MessageBits::new(flip).unwrap();

    let fa = bundle.encode_text(&tokenize(&a)).unwrap();
    let fb = bundle.encode_text(&tokenize(&b)).unwrap();
    let dist: f64 = (&fa - &fb).mapv(|v| v * v).sum().sqrt();
    let norm_a: f64 = fa.dot(&fa).sqrt();
    println!("feature norm {norm_a:.4}, single-bit-flip distance {dist:.6}");

    let start = std::time::Instant::now();
    for _ in 0..20 {
        let _ = bundle.encode_text(&tokenize(&a)).unwrap();
    }
    println!("encode_text: {:?} per call", start.elapsed() / 20);

    for (bits, epochs) in [(8usize, 100usize), (16, 100), (32, 100), (48, 100), (64, 100)] {
        let t0 = std::time::Instant::now();
        let config = DecoderTrainConfig { bits, epochs, seed: 5, ..Default::default() };
        let (_, report) = train_decoder(&bundle, &config).unwrap();
        println!(
            "L={bits}: msgs={} train_acc={:.4} heldout_acc={:.4} loss={:.4} ({:?})",
            report.n_messages,
            report.train_accuracy,
            report.heldout_accuracy,
            report.final_train_loss,
            t0.elapsed()
        );
    }
}
