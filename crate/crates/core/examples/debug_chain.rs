use ndarray::Array2;
use splatmark::asset::{apply_offsets, SHOffsetField, SH_COEFFS};
use splatmark::codec::{message_loss, train_decoder, DecoderTrainConfig, MessageBits, PROB_CLAMP};
use splatmark::distort::{apply_train, train_vjp, DistortionKind, DistortionSpec};
use splatmark::encoders::{EncoderBundle, ToyBundle};
use splatmark::render::{render, render_gradient};
use splatmark::scene::make_toy_scene;
use splatmark::watermark::recon_loss_with_grad;
use splatmark::metrics::NullPerceptual;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let scene = make_toy_scene(11, 60, 2, 48).unwrap();
    let bundle = ToyBundle::seeded(21);
    let (decoder, _) = train_decoder(
        &bundle,
        &DecoderTrainConfig { bits: 8, max_messages: 256, seed: 3, ..Default::default() },
    )
    .unwrap();
    let message = MessageBits::from_hex("b7", 8).unwrap();
    let cache = &scene.caches[0];
    let orig = &scene.ground_truth[0];
    let (l_msg, l_rec, l_off) = (0.03f64, 1.0f64, 10.0f64);

    // Distortion fixed across evaluations so the objective is a fixed
    // function of the offsets.
    let spec = DistortionSpec::new(DistortionKind::default_rotate(), 7);

    let loss = |off: &SHOffsetField| -> f64 {
        let wmk = apply_offsets(&scene.asset, off).unwrap();
        let img = render(&wmk, cache).unwrap();
        let (dimg, _) = apply_train(&img, &spec).unwrap();
        let feat = bundle.encode_image(&dimg).unwrap();
        let probs: Vec<f64> = decoder.probabilities(&feat);
        let lm = message_loss(&probs, &message).unwrap();
        let (lr, _) = recon_loss_with_grad(&img, orig, 0.2, &NullPerceptual).unwrap();
        l_msg * lm + l_rec * lr + l_off * off.mean_squared_norm()
    };

    // Analytic gradient, mirroring the embed loop.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = scene.asset.len();
    let mut off = SHOffsetField::zeros(n);
    for o in off.offsets_mut() {
        for v in o.iter_mut() {
            *v = rng.random_range(-0.05..0.05);
        }
    }
    let wmk = apply_offsets(&scene.asset, &off).unwrap();
    let img = render(&wmk, cache).unwrap();
    let (dimg, dctx) = apply_train(&img, &spec).unwrap();
    let (feat, ectx) = bundle.encode_image_fwd(&dimg).unwrap();
    let fwd = decoder.forward(&feat.view().insert_axis(ndarray::Axis(0)));
    let mut d_logits = Array2::zeros((1, message.len()));
    for (j, (&p, &m)) in fwd.probs.row(0).iter().zip(message.bits()).enumerate() {
        let clamped = p < PROB_CLAMP || p > 1.0 - PROB_CLAMP;
        // message_loss clamps, so match its true local derivative.
        d_logits[(0, j)] = if clamped { 0.0 } else { p - f64::from(m) };
    }
    let dec_back = decoder.backward(&fwd, &d_logits.view());
    let d_feat = dec_back.d_input.index_axis_move(ndarray::Axis(0), 0);
    let d_dimg = bundle.encode_image_bwd(&ectx, &d_feat.view());
    let d_img_msg = train_vjp(&dctx, &d_dimg);
    let (_, d_img_rec) = recon_loss_with_grad(&img, orig, 0.2, &NullPerceptual).unwrap();
    let mut d_img = splatmark::RenderedImage::new(img.width(), img.height());
    for (o, (a, b)) in d_img
        .data_mut()
        .iter_mut()
        .zip(d_img_msg.data().iter().zip(d_img_rec.data()))
    {
        *o = l_msg * a + l_rec * b;
    }
    let mut grad = render_gradient(&wmk, cache, &d_img).unwrap();
    for (i, g) in grad.iter_mut().enumerate() {
        for k in 0..SH_COEFFS {
            g[k] += l_off * 2.0 / n as f64 * off.offsets()[i][k];
        }
    }

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..400 {
        let i = rng.random_range(0..n);
        let k = rng.random_range(0..SH_COEFFS);
        if grad[i][k].abs() < 1e-7 {
            continue;
        }
        let mut p = off.clone();
        p.offsets_mut()[i][k] += h;
        let up = loss(&p);
        p.offsets_mut()[i][k] -= 2.0 * h;
        let down = loss(&p);
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i][k] - fd).abs() / grad[i][k].abs().max(fd.abs());
        if rel > worst {
            worst = rel;
            if rel > 1e-3 {
                println!("({i},{k}): analytic {} fd {} rel {rel:.2e}", grad[i][k], fd);
            }
        }
        checked += 1;
        if checked >= 60 {
            break;
        }
    }
    println!("checked {checked} coords, worst rel err {worst:.3e}");
}
