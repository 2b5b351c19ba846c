use splatmark::codec::{train_decoder, DecoderTrainConfig, MessageBits};
use splatmark::encoders::ToyBundle;
use splatmark::scene::make_toy_scene;
use splatmark::watermark::{embed, extract_from_asset, EmbedConfig};
use splatmark::{apply_offsets, metrics};

fn main() {
    let t0 = std::time::Instant::now();
    let scene = make_toy_scene(11, 200, 6, 64).unwrap();
    let bundle = ToyBundle::seeded(21);
    let train_cfg = DecoderTrainConfig {
        bits: 8,
        max_messages: 256,
        epochs: 100,
        seed: 3,
        ..Default::default()
    };
    let (decoder, report) = train_decoder(&bundle, &train_cfg).unwrap();
    println!(
        "decoder: heldout {:.4} epochs {} loss {:.4} ({:?})",
        report.heldout_accuracy,
        report.epochs_run,
        report.final_train_loss,
        t0.elapsed()
    );

    let message = MessageBits::from_hex("b7", 8).unwrap();
    let config = EmbedConfig { epochs: 40, batch_views: 6, seed: 5, ..Default::default() };
    let t1 = std::time::Instant::now();
    let (offsets, logs) =
        embed(&scene.asset, &message, &scene.views[..4], &bundle, &decoder, &config).unwrap();
    println!("embed took {:?}", t1.elapsed());
    for log in logs.iter().step_by(4).chain([logs.last().unwrap()]) {
        println!(
            "epoch {:3}: total {:.4} msg {:.4} recon {:.5} off {:.6} bit_acc {:.3} psnr {:.1}",
            log.epoch, log.total_loss, log.msg_loss, log.recon_loss, log.offset_loss, log.bit_acc, log.psnr_db
        );
    }

    let wmk = apply_offsets(&scene.asset, &offsets).unwrap();
    for v in [4usize, 5] {
        let got = extract_from_asset(&wmk, &scene.views[v], &bundle, &decoder).unwrap();
        let acc = metrics::bit_accuracy(&got, &message).unwrap();
        println!("held-out view {v}: bit acc {acc:.3}");
    }
}
