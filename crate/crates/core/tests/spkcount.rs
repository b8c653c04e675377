use dasr_core::audio::WaveformSet;
use dasr_core::spkcount::{
    aggregate_counts, count_speakers, count_with_groups, group_microphones, mic_similarity, nme_count, stub_embedding,
    CountingConfig, EmbeddingIndex, EmbeddingSet, MicGroups, STUB_EMBEDDING_DIM,
};
use dasr_core::synth;
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SR: u32 = 16000;

#[test]
fn three_clusters_found_in_95_percent_of_seeds() {
    let mut ok = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _) = synth::planted_clusters(&mut rng, 3, 20, 32, 0.3);
        if nme_count(&x, 10, 16).unwrap().count == 3 {
            ok += 1;
        }
    }
    assert!(ok >= 95, "{ok}/100");
}

#[test]
fn near_identical_embeddings_are_one_speaker() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, _) = synth::planted_clusters(&mut rng, 1, 60, 16, 1e-6);
    assert_eq!(nme_count(&x, 10, 16).unwrap().count, 1);
}

#[test]
fn antipodal_clusters_are_two_speakers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, _) = synth::planted_clusters(&mut rng, 1, 30, 16, 0.2);
    let mut x = Array2::zeros((60, 16));
    for i in 0..30 {
        x.row_mut(i).assign(&a.row(i));
        let b = &a.row((i + 7) % 30) * -1.0;
        x.row_mut(30 + i).assign(&b);
    }
    assert_eq!(nme_count(&x, 10, 16).unwrap().count, 2);
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let m = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = m.qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nme_invariant_to_order_and_rotation(seed in 0u64..10_000, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _) = synth::planted_clusters(&mut rng, k, 12, 8, 0.4);
        let base = nme_count(&x, 10, 16).unwrap();
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.shuffle(&mut rng);
        let permuted = x.select(ndarray::Axis(0), &order);
        prop_assert_eq!(nme_count(&permuted, 10, 16).unwrap().count, base.count);
        let rotated = x.dot(&random_orthogonal(&mut rng, 8));
        prop_assert_eq!(nme_count(&rotated, 10, 16).unwrap().count, base.count);
    }

    #[test]
    fn grouping_is_a_partition(seed in 0u64..10_000, m in 1usize..12, theta in -0.5f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = synth::white_noise(&mut rng, m * 4, 1.0);
        let x = Array2::from_shape_vec((m, 4), feats).unwrap();
        let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let l = Array2::from_shape_fn((m, m), |(i, j)| {
            if i == j { 1.0 } else { x.row(i).dot(&x.row(j)) / (norms[i] * norms[j]) }
        });
        let g = group_microphones(&l, theta).unwrap();
        let mut all: Vec<usize> = g.groups.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn aggregate_within_hull(groups in prop::collection::vec((1usize..10, 1usize..100), 1..6)) {
        let s = aggregate_counts(&groups).unwrap();
        let lo = groups.iter().map(|g| g.0).min().unwrap();
        let hi = groups.iter().map(|g| g.0).max().unwrap();
        prop_assert!(s >= lo && s <= hi);
    }
}

#[test]
fn similarity_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y1 = synth::white_noise(&mut rng, 2 * SR as usize, 1.0);
    let y2: Vec<f64> = y1.iter().map(|v| 2.0 * v + 3.0).collect();
    let y3 = synth::white_noise(&mut rng, 2 * SR as usize, 1.0);
    let flat = vec![0.25; 2 * SR as usize];
    let w = WaveformSet::new(vec![y1, y2, y3, flat], SR).unwrap();
    let sim = mic_similarity(&w, 120.0).unwrap();
    let l = &sim.matrix;
    for i in 0..4 {
        assert_eq!(l[[i, i]], 1.0);
        for j in 0..4 {
            assert_eq!(l[[i, j]], l[[j, i]]);
            assert!((-1.0..=1.0).contains(&l[[i, j]]));
        }
    }
    assert!((l[[0, 1]] - 1.0).abs() < 1e-9);
    assert_eq!(sim.zero_variance, vec![3]);
    assert_eq!(l[[3, 0]], 0.0);
    let short = WaveformSet::new(vec![vec![0.1; SR as usize / 2]], SR).unwrap();
    assert!(mic_similarity(&short, 120.0).is_err());
}

#[test]
fn independent_noise_is_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 120 * SR as usize;
    let chans: Vec<Vec<f64>> = (0..3).map(|_| synth::white_noise(&mut rng, n, 1.0)).collect();
    let sim = mic_similarity(&WaveformSet::new(chans, SR).unwrap(), 120.0).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert!(sim.matrix[[i, j]].abs() < 0.01);
            }
        }
    }
}

fn index_rows(n: usize, mic: usize, duration: f64) -> Vec<EmbeddingIndex> {
    (0..n)
        .map(|i| EmbeddingIndex {
            mic,
            chunk: i / 4,
            subchunk: (i / 2) % 2,
            local_speaker: i % 2,
            duration,
        })
        .collect()
}

#[test]
fn weighted_counting_across_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (a, _) = synth::planted_clusters(&mut rng, 4, 20, 32, 0.3);
    let (b, _) = synth::planted_clusters(&mut rng, 2, 30, 32, 0.3);
    let set = EmbeddingSet::concat(&[
        EmbeddingSet::new(a, index_rows(80, 0, 2.0)).unwrap(),
        EmbeddingSet::new(b, index_rows(60, 1, 2.0)).unwrap(),
    ])
    .unwrap();
    let groups = MicGroups {
        groups: vec![vec![0], vec![1]],
        similarity: Array2::eye(2),
    };
    let est = count_with_groups(&groups, &set, &CountingConfig::default()).unwrap();
    assert_eq!(est.per_group.iter().map(|g| (g.count, g.weight)).collect::<Vec<_>>(), vec![(4, 80), (2, 60)]);
    // (4*80 + 2*60) / 140 = 3.14
    assert_eq!(est.session, 3);
}

#[test]
fn counting_errors_when_everything_is_filtered() {
    let set = EmbeddingSet::new(Array2::ones((4, 3)), index_rows(4, 0, 0.1)).unwrap();
    let groups = MicGroups {
        groups: vec![vec![0]],
        similarity: Array2::eye(1),
    };
    assert!(count_with_groups(&groups, &set, &CountingConfig::default()).is_err());
}

#[test]
fn count_speakers_on_recorded_session() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let src = synth::speech_like(&mut rng, 3 * SR as usize, SR);
    let wave = WaveformSet::new(vec![src.clone(), synth::delayed(&src, 1, 0.9)], SR).unwrap();
    let (x, _) = synth::planted_clusters(&mut rng, 3, 20, 16, 0.3);
    let mut idx = index_rows(30, 0, 1.0);
    idx.extend(index_rows(30, 1, 1.0));
    let est = count_speakers(&wave, &EmbeddingSet::new(x, idx).unwrap(), &CountingConfig::default()).unwrap();
    assert_eq!(est.per_group.len(), 1);
    assert_eq!(est.session, 3);
}

#[test]
fn stub_embedding_shape_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = synth::speech_like(&mut rng, 2 * SR as usize, SR);
    let e = stub_embedding(&x, SR, &[(0.2, 1.5)]).unwrap();
    assert_eq!(e.len(), STUB_EMBEDDING_DIM);
    assert!(e.iter().all(|v| v.is_finite()));
    assert_eq!(e, stub_embedding(&x, SR, &[(0.2, 1.5)]).unwrap());
    assert!(stub_embedding(&x, SR, &[(5.0, 6.0)]).is_err());
}
