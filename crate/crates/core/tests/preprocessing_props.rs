mod common;

use common::{random_trial, rng};
use proptest::prelude::*;
use riemann_ssvep::preprocessing::{epoch_stream, BandParams, EpochPlan, FilterBank};

const STIM: [f64; 3] = [13.0, 17.0, 21.0];

fn bank() -> FilterBank {
    FilterBank::new(&STIM, &BandParams::default(), 256.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtering_is_linear(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mut r = rng(seed);
        let x = random_trial(&mut r, 1, 512).row(0);
        let y = random_trial(&mut r, 1, 512).row(0);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        for filter in bank().filters() {
            let (fx, fy, fm) = (filter.filter(&x), filter.filter(&y), filter.filter(&mix));
            for k in 0..mix.len() {
                prop_assert!((fm[k] - (a * fx[k] + b * fy[k])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn blocks_are_independent_filterings(seed in any::<u64>(), c in 1usize..=6) {
        let t = random_trial(&mut rng(seed), c, 300);
        let bank = bank();
        let ext = bank.extend(&t).unwrap();
        prop_assert_eq!(ext.trial.channels(), STIM.len() * c);
        for (f, filter) in bank.filters().iter().enumerate() {
            let block = ext.block(f).unwrap();
            for ch in 0..c {
                prop_assert_eq!(block.row(ch), filter.filter(&t.row(ch)));
            }
        }
    }

    #[test]
    fn streaming_equals_batch_filtering(seed in any::<u64>(), c in 1usize..=4) {
        let t = random_trial(&mut rng(seed), c, 400);
        let bank = bank();
        let batch = bank.extend(&t).unwrap().trial;
        let mut stream = bank.stream(c);
        let mut out = vec![0.0; stream.output_channels()];
        for k in 0..t.samples() {
            let frame: Vec<f64> = (0..c).map(|ch| t.values()[(ch, k)]).collect();
            stream.process_frame(&frame, &mut out).unwrap();
            for (row, v) in out.iter().enumerate() {
                prop_assert_eq!(*v, batch.values()[(row, k)]);
            }
        }
    }

    #[test]
    fn epoch_tails_rebuild_the_recording(seed in any::<u64>(), len in 1000usize..3000, step in 0.05f64..0.5) {
        let t = random_trial(&mut rng(seed), 2, len);
        let plan = EpochPlan::new(2.0, step).unwrap();
        let (w, d) = plan.sample_counts(256.0).unwrap();
        let epochs = epoch_stream(&t, &plan).unwrap();
        prop_assert_eq!(epochs.len(), (len - w) / d + 1);
        // first epoch whole, then the last `d` samples of each later epoch
        let mut rebuilt: Vec<f64> = epochs[0].row(1);
        for e in &epochs[1..] {
            let row = e.row(1);
            rebuilt.extend_from_slice(&row[w - d..]);
        }
        let original = t.row(1);
        prop_assert_eq!(&rebuilt[..], &original[..rebuilt.len()]);
        prop_assert!(rebuilt.len() + d > len);
    }
}
