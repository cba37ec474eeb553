//! Decode one spatially coupled frame and print the per-block NMSE wave
//! alongside the state-evolution prediction.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparc_core::amp::{decode_tracked, DecoderConfig};
use sparc_core::base_matrix::BaseMatrix;
use sparc_core::channel::add_awgn;
use sparc_core::design::DesignOperator;
use sparc_core::encoder::{encode, MessageVector};
use sparc_core::params::SparcParams;
use sparc_core::se::{run_se, McConfig};

fn main() {
    let power = 1.0;
    let snr = 15.0;
    let sigma2 = power / snr;
    let base = BaseMatrix::spatially_coupled(6, 32, 0.0, power).unwrap();
    let params = SparcParams::new(512, 256, 1, 1332, power, sigma2, 37, 32).unwrap();
    println!(
        "rate {:.4} nats/use = {:.3} bits/dim; capacity {:.3} bits",
        params.rate_nats,
        params.rate_nats / (2.0 * std::f64::consts::LN_2),
        params.snr().ln_1p() / std::f64::consts::LN_2
    );

    let t0 = std::time::Instant::now();
    let se = run_se(
        &base,
        &params,
        60,
        &McConfig {
            samples: 3000,
            seed: 7,
        },
    )
    .unwrap();
    println!("SE: {} states in {:?}", se.len(), t0.elapsed());
    for state in se.iter().step_by(8) {
        let mean: f64 = state.psi.iter().sum::<f64>() / 32.0;
        println!("  t={:2} mean psi {:.4}", state.iteration, mean);
    }

    let t0 = std::time::Instant::now();
    let op = DesignOperator::build_dft(&base, &params, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let msg = MessageVector::random(&params, &mut rng);
    let x = encode(&op, &msg).unwrap();
    let power_emp = x.iter().map(Complex64::norm_sqr).sum::<f64>() / x.len() as f64;
    let y = add_awgn(&x, sigma2, 3).unwrap();
    let config = DecoderConfig::default();
    let (decoded, report) = decode_tracked(&y, &op, &base, &params, &config, Some(&msg)).unwrap();
    println!(
        "decode: {} iterations in {:?}; empirical power {:.4}",
        report.iterations,
        t0.elapsed(),
        power_emp
    );
    let correct = decoded.is_some_and(|d| d == msg);
    println!(
        "exact recovery: {correct}; final NMSE proxy {:.2e}",
        report.final_nmse_proxy
    );
    if let Some(trace) = &report.nmse_trace {
        for (t, row) in trace.iter().enumerate().step_by(8) {
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let se_psi = se
                .get(t + 1)
                .map(|s| s.psi.iter().sum::<f64>() / 32.0)
                .unwrap_or(0.0);
            println!(
                "  t={:2} amp mean NMSE {:.4}  se mean psi {:.4}",
                t + 1,
                mean,
                se_psi
            );
        }
    }
}
