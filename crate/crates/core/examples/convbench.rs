//! Rough conv throughput probe used while sizing the experiments.
use instcal_core::conv::*;
use std::time::Instant;

fn main() {
    // typical hot shapes: 16ch 64x64 stride1, 32ch 32x32 stride2
    let cases = [
        (1usize, 16usize, 16usize, 64usize, 64usize, 1usize),
        (1, 16, 32, 64, 64, 2),
        (1, 32, 32, 32, 32, 2),
        (1, 32, 16, 32, 32, 1),
    ];
    for (n, ic, oc, h, w, s) in cases {
        let input = vec![0.5f64; n * ic * h * w];
        let weight = vec![0.01f64; oc * ic * 9];
        let oh = conv_out_extent(h, 3, s, 1);
        let ow = conv_out_extent(w, 3, s, 1);
        let mut out = vec![0.0; n * oc * oh * ow];
        let reps = 200;
        let t0 = Instant::now();
        for _ in 0..reps {
            out.iter_mut().for_each(|v| *v = 0.0);
            conv2d_forward(&input, n, ic, h, w, &weight, oc, 3, 3, s, 1, &mut out);
        }
        let dt = t0.elapsed().as_secs_f64();
        let flops = 2.0 * (n * oc * oh * ow * ic * 9) as f64 * reps as f64;
        println!(
            "fwd  {ic:>2}->{oc:>2} {h}x{w} s{s}: {:.2} GFLOP/s  ({:.3} ms/call)",
            flops / dt / 1e9,
            dt * 1e3 / reps as f64
        );
        let mut gi = vec![0.0; n * ic * h * w];
        let t0 = Instant::now();
        for _ in 0..reps {
            gi.iter_mut().for_each(|v| *v = 0.0);
            conv2d_backward_data(&out, n, ic, h, w, &weight, oc, 3, 3, s, 1, &mut gi);
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("bwd-d{ic:>2}->{oc:>2} {h}x{w} s{s}: {:.2} GFLOP/s", flops / dt / 1e9);
        let mut gw = vec![0.0; oc * ic * 9];
        let t0 = Instant::now();
        for _ in 0..reps {
            gw.iter_mut().for_each(|v| *v = 0.0);
            conv2d_backward_weight(&out, &input, n, ic, h, w, oc, 3, 3, s, 1, &mut gw);
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("bwd-w{ic:>2}->{oc:>2} {h}x{w} s{s}: {:.2} GFLOP/s", flops / dt / 1e9);
    }
}
