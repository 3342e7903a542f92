//! Gate, classifiers and GZSL scoring on hand-made latent clusters.

use fsvae::numkit::{standard_normal, DenseMatrix, RngSeed};
use fsvae::pipeline::{gate_features, gzsl_accuracy, Classify, GateModel, SoftmaxClassifier, SoftmaxTraining};
use fsvae::ClassId;

fn cluster(centers: &[(ClassId, [f64; 2])], n: usize, rng: &mut impl rand::Rng) -> (DenseMatrix, Vec<ClassId>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, m) in centers {
        for _ in 0..n {
            rows.push(vec![m[0] + 0.3 * standard_normal(rng), m[1] + 0.3 * standard_normal(rng)]);
            labels.push(*c);
        }
    }
    (DenseMatrix::from_rows(&rows).unwrap(), labels)
}

fn main() -> fsvae::Result<()> {
    let mut rng = RngSeed::new(4, 0).rng();
    let seen = [(0, [2.0, 0.0]), (1, [-2.0, 0.0])];
    let unseen = [(2, [0.0, 3.0]), (3, [0.0, -3.0])];
    let opts = SoftmaxTraining { epochs: 200, lr: 1e-2, batch_size: 32 };

    let (zs, ls) = cluster(&seen, 100, &mut rng);
    let (zu, lu) = cluster(&unseen, 100, &mut rng);
    let seen_clf = SoftmaxClassifier::train(vec![0, 1], &zs, &ls, &opts, &mut rng)?;
    let unseen_clf = SoftmaxClassifier::train(vec![2, 3], &zu, &lu, &opts, &mut rng)?;

    let (hold, _) = cluster(&seen, 30, &mut rng);
    let feats = |m: &DenseMatrix| -> Vec<[f64; 2]> {
        m.iter_rows().map(|z| gate_features(&seen_clf.predict_proba(z))).collect()
    };
    let gate = GateModel::fit(&feats(&hold), &feats(&zu), 1.0)?;

    let (ts, tls) = cluster(&seen, 50, &mut rng);
    let (tu, tlu) = cluster(&unseen, 50, &mut rng);
    let r = gzsl_accuracy(&gate, &seen_clf, &unseen_clf, &ts, &tls, &tu, &tlu)?;
    println!("seen {:.3} unseen {:.3} H {:.3}", r.seen, r.unseen, r.harmonic_mean);
    println!("routing: seen->seen {:.3}, unseen->unseen {:.3}", r.seen_routed_to_seen, r.unseen_routed_to_unseen);
    Ok(())
}
