use splatmark::codec::{tokenize, MessageBits};
use splatmark::encoders::{EncoderBundle, ToyBundle};
use splatmark::scene::make_toy_scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

fn main() {
    let scene = make_toy_scene(11, 1000, 8, 128).unwrap();
    let bundle = ToyBundle::seeded(21);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut out = std::fs::File::create("/tmp/text_feats.csv").unwrap();
    for _ in 0..400 {
        let m = MessageBits::random(16, &mut rng).unwrap();
        let f = bundle.encode_text(&tokenize(&m)).unwrap();
        let row: Vec<String> = f.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }

    let mut out = std::fs::File::create("/tmp/img_feats.csv").unwrap();
    for gt in &scene.ground_truth {
        let f = bundle.encode_image(gt).unwrap();
        let row: Vec<String> = f.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    println!("dumped 400 text + {} image features", scene.ground_truth.len());
}
