//! Scratch calibration for the synthetic-lift acceptance settings.

use lir::client::{MockChatClient, MockEmbedClient};
use lir::ctr::{CtrConfig, CtrModel, CtrSample, FieldSchema};
use lir::data::{default_topics, generate_synthetic_stream};
use lir::fusion::FuseMode;
use lir::ledger::EfficiencyLedger;
use lir::metrics::{auc, log_loss};
use lir::pipeline::{build_training_samples, split_cutoff, Pipeline, Variant, VariantConfig};
use lir::prompt::PromptTemplates;
use lir::store::RepresentationStore;

fn train_eval(
    train: &[CtrSample],
    test: &[CtrSample],
    fuse: FuseMode,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> (f64, f64, f64) {
    let schema = FieldSchema::build(train);
    let d_red = train
        .iter()
        .chain(test)
        .flat_map(|s| s.long_term.first())
        .map(|v| v.len())
        .next()
        .unwrap_or(32);
    let cfg = CtrConfig {
        embed_dim: 32,
        hidden: vec![200, 80],
        d_red,
        d_att: 32,
        fuse,
        history_max: 20,
        seed,
    };
    let mut model = CtrModel::new(schema, cfg);
    let report = model.train(train, epochs, lr, batch, seed).unwrap();
    let scores = model.predict_batch(test);
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    (
        auc(&scores, &labels).unwrap(),
        log_loss(&scores, &labels).unwrap(),
        *report.epoch_losses.last().unwrap(),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(32);
    println!("epochs={epochs} lr={lr} batch={batch}");

    let chat = MockChatClient::new();
    let embed = MockEmbedClient::new(64);
    let templates = PromptTemplates::default();

    let mut mean_full = 0.0;
    let mut mean_nois = 0.0;
    for seed in 1..=3u64 {
        let dataset = generate_synthetic_stream(10, 180, &default_topics(), seed).unwrap();
        let cutoff = split_cutoff(&dataset, 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let run_variant = |variant: Variant, store_name: &str| {
            let cfg = VariantConfig {
                variant: variant.clone(),
                k: 20,
                d_red: 32,
                d_att: 32,
                seed,
            };
            let ledger = EfficiencyLedger::new(variant.label());
            let mut store = RepresentationStore::open(dir.path().join(store_name)).unwrap();
            let pipeline = Pipeline {
                cfg,
                chat: &chat,
                embed: &embed,
                templates: &templates,
            };
            let outcome = pipeline
                .process_stream(&dataset, &mut store, &ledger, None, Some(cutoff))
                .unwrap();
            build_training_samples(&dataset, &outcome, &store, &variant, 0.9, 20).unwrap()
        };

        let split_full = run_variant(Variant::Full, "full.bin");
        let split_nois = run_variant(Variant::NoInterestShift, "nois.bin");

        let (auc_full, ll_full, tl_full) = train_eval(
            &split_full.train,
            &split_full.test,
            FuseMode::SelfAttention,
            epochs,
            lr,
            batch,
            seed,
        );
        // zeros backbone: same samples with the long-term path emptied
        let strip = |s: &CtrSample| {
            let mut s = s.clone();
            s.long_term.clear();
            s
        };
        let bb_train: Vec<CtrSample> = split_full.train.iter().map(strip).collect();
        let bb_test: Vec<CtrSample> = split_full.test.iter().map(strip).collect();
        let (auc_bb, ll_bb, tl_bb) = train_eval(
            &bb_train,
            &bb_test,
            FuseMode::SelfAttention,
            epochs,
            lr,
            batch,
            seed,
        );
        let (auc_nois, _, _) = train_eval(
            &split_nois.train,
            &split_nois.test,
            FuseMode::SelfAttention,
            epochs,
            lr,
            batch,
            seed,
        );
        println!(
            "seed {seed}: full AUC {auc_full:.4} (ll {ll_full:.4}, train {tl_full:.4}) | backbone {auc_bb:.4} (ll {ll_bb:.4}, train {tl_bb:.4}) | noIS {auc_nois:.4} | lift {:.4}",
            auc_full - auc_bb
        );
        mean_full += auc_full / 3.0;
        mean_nois += auc_nois / 3.0;
    }
    println!("mean full {mean_full:.4} vs mean noIS {mean_nois:.4} (delta {:.4})", mean_full - mean_nois);
}
