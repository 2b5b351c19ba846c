use splatmark::codec::{tokenize, train_decoder, DecoderTrainConfig, FeatureConditioning, MessageBits};
use splatmark::encoders::{EncoderBundle, ToyBundle};
use splatmark::scene::make_toy_scene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let scene = make_toy_scene(11, 200, 4, 64).unwrap();
    let bundle = ToyBundle::seeded(21);
    for (name, cond, bits) in [
        ("std L8", FeatureConditioning::Standardize, 8usize),
        ("zca.1 L8", FeatureConditioning::Whiten { shrinkage: 0.1 }, 8),
        ("std L32", FeatureConditioning::Standardize, 32),
        ("zca.1 L32", FeatureConditioning::Whiten { shrinkage: 0.1 }, 32),
        ("zca.01 L32", FeatureConditioning::Whiten { shrinkage: 0.01 }, 32),
    ] {
    let (decoder, report) = train_decoder(
        &bundle,
        &DecoderTrainConfig { bits, seed: 3, conditioning: cond, ..Default::default() },
    )
    .unwrap();
    println!(
        "{name}: decoder heldout {:.4}, epochs {}, loss {:.4}",
        report.heldout_accuracy, report.epochs_run, report.final_train_loss
    );
    let bits = decoder.bits();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut text_logits = Vec::new();
    for _ in 0..50 {
        let m = MessageBits::random(bits, &mut rng).unwrap();
        let f = bundle.encode_text(&tokenize(&m)).unwrap();
        let fwd = decoder.forward(&f.view().insert_axis(ndarray::Axis(0)));
        text_logits.extend(fwd.logits.iter().map(|v| v.abs()));
    }
    let stats = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[v.len() / 2], v[v.len() * 9 / 10], v[v.len() - 1])
    };
    let mut tl = text_logits;
    let (med, p90, max) = stats(&mut tl);
    println!("text |logit|: median {med:.1} p90 {p90:.1} max {max:.1}");

    let mut img_logits = Vec::new();
    for gt in &scene.ground_truth {
        let f = bundle.encode_image(gt).unwrap();
        let fwd = decoder.forward(&f.view().insert_axis(ndarray::Axis(0)));
        img_logits.extend(fwd.logits.iter().map(|v| v.abs()));
    }
    let (med, p90, max) = stats(&mut img_logits);
    println!("image |logit|: median {med:.1} p90 {p90:.1} max {max:.1}");
    }
}
