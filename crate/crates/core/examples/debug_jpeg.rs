use splatmark::distort::{jpeg_real, jpeg_surrogate};
use splatmark::metrics::psnr;
use splatmark::scene::photo_fixture;

fn main() {
    for seed in [1u64, 2, 3] {
        let img = photo_fixture(seed, 128, 96);
        for q in [90u8, 50, 10] {
            let (sur, _) = jpeg_surrogate(&img, q);
            let real = jpeg_real(&img, q).unwrap();
            let p_cross = psnr(&sur, &real).unwrap();
            let p_sur = psnr(&img, &sur).unwrap();
            let p_real = psnr(&img, &real).unwrap();
            println!(
                "seed {seed} q{q}: surrogate-vs-real {p_cross:.2} dB (sur {p_sur:.2}, real {p_real:.2})"
            );
        }
    }
}
