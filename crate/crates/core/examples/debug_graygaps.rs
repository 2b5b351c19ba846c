use splatmark::codec::bit_token;

fn gray(salt: u32, token: u32) -> f64 {
    let h = (token ^ salt).wrapping_mul(2654435761);
    0.05 + 0.9 * (f64::from(h >> 8) / f64::from(1u32 << 24))
}

fn main() {
    for &salt in &[0x0000_0000u32, 0x9e37_79b9, 0x3c6e_f372, 0x1234_5678, 0xdead_beef] {
        print!("salt {salt:#010x}:");
        for l in [8usize, 16, 32, 48, 64, 74] {
            // Min gap between the two grays of the SAME bit position, the
            // pair the decoder must tell apart.
            let mut min_pair_gap = f64::INFINITY;
            let mut min_any_gap = f64::INFINITY;
            let mut grays: Vec<f64> = Vec::new();
            for i in 1..=l {
                let g0 = gray(salt, bit_token(l, i, 0));
                let g1 = gray(salt, bit_token(l, i, 1));
                min_pair_gap = min_pair_gap.min((g0 - g1).abs());
                grays.push(g0);
                grays.push(g1);
            }
            grays.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in grays.windows(2) {
                min_any_gap = min_any_gap.min(w[1] - w[0]);
            }
            print!(" L{l}: pair={min_pair_gap:.4} any={min_any_gap:.5} |");
        }
        println!();
    }
}
