//! Stage one of the pipeline: entropy models and their augmented
//! embedding stores.
//!
//! Each entropy model is an encoder trained with `entropy_loss` at one
//! `phi` value, starting from the same initialization seed as the final
//! model. A store materializes one frozen embedding per sentence id and
//! model; regulator sets for a live batch are assembled out of stores by
//! sentence id.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{self, TupleDataset};
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::objectives::RegulatorSet;
use crate::textfeat::{self, FeatConfig};
use crate::trainer::{self, TrainConfig, TrainLog};

/// Settings for one entropy model: its entropy weight plus the shared
/// training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub phi: f64,
    pub train: TrainConfig,
}

/// Default entropy-weight grid; one model (two regulators) per value.
pub const DEFAULT_PHI_GRID: [f64; 4] = [0.01, 0.02, 0.03, 0.04];

/// Frozen embeddings of every sentence of a dataset under one entropy
/// model, plus enough provenance to detect mismatched reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedStore {
    pub model_id: u32,
    pub phi: f64,
    pub dim: usize,
    pub seed: u64,
    pub dataset_hash: String,
    entries: BTreeMap<String, Vec<f64>>,
}

/// One line of the store JSONL file.
#[derive(Debug, Serialize, Deserialize)]
struct StoreRecord {
    id: String,
    model_id: u32,
    phi: f64,
    vec: Vec<f64>,
}

/// Sidecar manifest written next to a store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub dataset_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub record_count: usize,
    pub model_id: u32,
    pub phi: f64,
}

impl AugmentedStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sentence_id: &str) -> Option<&[f64]> {
        self.entries.get(sentence_id).map(Vec::as_slice)
    }

    pub fn manifest(&self) -> StoreManifest {
        StoreManifest {
            dataset_hash: self.dataset_hash.clone(),
            seed: self.seed,
            dim: self.dim,
            record_count: self.len(),
            model_id: self.model_id,
            phi: self.phi,
        }
    }

    /// Write the JSONL store and its sidecar manifest
    /// (`<path>` and `<path>.manifest.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path)?;
        for (id, vec) in &self.entries {
            let record = StoreRecord {
                id: id.clone(),
                model_id: self.model_id,
                phi: self.phi,
                vec: vec.clone(),
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::data(format!("store serialization: {e}")))?;
            writeln!(file, "{line}")?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| Error::data(format!("store manifest serialization: {e}")))?;
        fs::write(sidecar_path(path), manifest)?;
        Ok(())
    }

    /// Read a store written by `save`, validating it against the sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read store `{}`: {e}", path.display())))?;
        let manifest_text = fs::read_to_string(sidecar_path(path)).map_err(|e| {
            Error::data(format!(
                "cannot read store manifest `{}`: {e}",
                sidecar_path(path).display()
            ))
        })?;
        let manifest: StoreManifest = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::data(format!("bad store manifest: {e}")))?;
        let mut entries = BTreeMap::new();
        let mut model_id = None;
        let mut phi = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: StoreRecord = serde_json::from_str(line)
                .map_err(|e| Error::data_at(format!("bad store record: {e}"), lineno + 1))?;
            if record.vec.len() != manifest.dim {
                return Err(Error::data_at(
                    format!(
                        "store vector dim {} does not match manifest dim {}",
                        record.vec.len(),
                        manifest.dim
                    ),
                    lineno + 1,
                ));
            }
            if *model_id.get_or_insert(record.model_id) != record.model_id
                || *phi.get_or_insert(record.phi) != record.phi
            {
                return Err(Error::data_at(
                    "store mixes records from different models".to_string(),
                    lineno + 1,
                ));
            }
            if entries.insert(record.id.clone(), record.vec).is_some() {
                return Err(Error::data_at(
                    format!("duplicate sentence id `{}` in store", record.id),
                    lineno + 1,
                ));
            }
        }
        if entries.len() != manifest.record_count {
            return Err(Error::data(format!(
                "store has {} records but manifest says {}",
                entries.len(),
                manifest.record_count
            )));
        }
        if model_id.is_some() && model_id != Some(manifest.model_id) {
            return Err(Error::data("store model_id disagrees with manifest"));
        }
        Ok(AugmentedStore {
            model_id: manifest.model_id,
            phi: manifest.phi,
            dim: manifest.dim,
            seed: manifest.seed,
            dataset_hash: manifest.dataset_hash,
            entries,
        })
    }
}

fn sidecar_path(store_path: &Path) -> std::path::PathBuf {
    let mut name = store_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    store_path.with_file_name(name)
}

/// Train one entropy model. Shares the final model's initialization seed
/// (it comes from `enc_cfg`), minimizes `entropy_loss` at `cfg.phi`, and
/// early-stops on validation loss with the configured patience.
pub fn train_entropy_model(
    data: &TupleDataset,
    cfg: &EntropyConfig,
    feat_cfg: &FeatConfig,
    enc_cfg: &EncoderConfig,
) -> Result<(EncoderParams, TrainLog)> {
    if !cfg.phi.is_finite() {
        return Err(Error::config("phi must be finite"));
    }
    trainer::train_model(
        data,
        trainer::Objective::Entropy { phi: cfg.phi },
        feat_cfg,
        enc_cfg,
        &cfg.train,
    )
}

/// Forward every sentence of the dataset through a trained model and
/// freeze the embeddings into a store. `seed` is recorded as provenance
/// (the training seed that produced `params`).
pub fn generate_store(
    params: &EncoderParams,
    data: &TupleDataset,
    model_id: u32,
    phi: f64,
    feat_cfg: &FeatConfig,
    seed: u64,
) -> Result<AugmentedStore> {
    if data.is_empty() {
        return Err(Error::data("cannot build a store from an empty dataset"));
    }
    let mut ids = Vec::with_capacity(data.len() * 2);
    let mut texts = Vec::with_capacity(data.len() * 2);
    for t in data.tuples() {
        ids.push(datasets::query_sid(&t.id));
        texts.push(t.query.as_str());
        ids.push(datasets::index_sid(&t.id));
        texts.push(t.index.as_str());
    }
    let feats = textfeat::featurize_batch(&texts, feat_cfg);
    let batch = encoder::forward(params, &feats, &ids)?;
    let entries: BTreeMap<String, Vec<f64>> = batch.ids.into_iter().zip(batch.rows).collect();
    Ok(AugmentedStore {
        model_id,
        phi,
        dim: params.embed_dim,
        seed,
        dataset_hash: data.content_hash(),
        entries,
    })
}

/// Assemble the frozen per-model matrices for a batch, aligned with the
/// given row order. Every id must be present in every store.
pub fn build_regulator_set(
    stores: &[AugmentedStore],
    batch_query_sids: &[String],
    batch_index_sids: &[String],
) -> Result<RegulatorSet> {
    let mut aug_q = Vec::with_capacity(stores.len());
    let mut aug_ind = Vec::with_capacity(stores.len());
    for store in stores {
        let lookup = |sid: &String| -> Result<Vec<f64>> {
            store
                .get(sid)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::MissingId {
                    sentence_id: sid.clone(),
                    model_id: store.model_id,
                })
        };
        aug_q.push(batch_query_sids.iter().map(lookup).collect::<Result<_>>()?);
        aug_ind.push(batch_index_sids.iter().map(lookup).collect::<Result<_>>()?);
    }
    RegulatorSet::new(aug_q, aug_ind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{parse_jsonl, Tuple};

    fn tiny_dataset() -> TupleDataset {
        let text = r#"{"id":"t1","query":"how to reset password","index":"open settings choose reset"}
{"id":"t2","query":"printer will not start","index":"check the power cable"}
{"id":"t3","query":"export report to file","index":"use the export menu entry"}
"#;
        parse_jsonl(text).unwrap()
    }

    fn small_setup() -> (FeatConfig, EncoderConfig) {
        let feat = FeatConfig {
            ngram_size: 3,
            num_buckets: 64,
            lowercase: true,
        };
        let enc = EncoderConfig {
            input_dim: 64,
            hidden_dim: 16,
            embed_dim: 8,
            seed: 21,
        };
        (feat, enc)
    }

    #[test]
    fn store_covers_every_sentence_once() {
        let (feat, enc) = small_setup();
        let params = encoder::init_params(&enc).unwrap();
        let data = tiny_dataset();
        let store = generate_store(&params, &data, 0, 0.02, &feat, 21).unwrap();
        assert_eq!(store.len(), 6);
        for t in data.tuples() {
            assert!(store.get(&datasets::query_sid(&t.id)).is_some());
            assert!(store.get(&datasets::index_sid(&t.id)).is_some());
        }
    }

    #[test]
    fn duplicate_texts_embed_identically() {
        let (feat, enc) = small_setup();
        let params = encoder::init_params(&enc).unwrap();
        let data = TupleDataset::new(vec![
            Tuple {
                id: "a".into(),
                query: "same sentence text".into(),
                index: "answer one".into(),
                hard_negative: None,
                score: None,
                relevant_ids: None,
            },
            Tuple {
                id: "b".into(),
                query: "same sentence text".into(),
                index: "answer two".into(),
                hard_negative: None,
                score: None,
                relevant_ids: None,
            },
        ])
        .unwrap();
        let store = generate_store(&params, &data, 0, 0.01, &feat, 21).unwrap();
        assert_eq!(store.get("a::q"), store.get("b::q"));
        assert_ne!(store.get("a::ind"), store.get("b::ind"));
    }

    #[test]
    fn store_round_trip_is_bit_identical() {
        let (feat, enc) = small_setup();
        let params = encoder::init_params(&enc).unwrap();
        let store = generate_store(&params, &tiny_dataset(), 3, 0.04, &feat, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        store.save(&path).unwrap();
        let loaded = AugmentedStore::load(&path).unwrap();
        assert_eq!(store, loaded);
        // Re-saving produces byte-identical files.
        let path2 = dir.path().join("store2.jsonl");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn regulator_set_counts_models() {
        let (feat, enc) = small_setup();
        let params = encoder::init_params(&enc).unwrap();
        let data = tiny_dataset();
        let stores: Vec<AugmentedStore> = (0..4)
            .map(|n| generate_store(&params, &data, n, 0.01 * (n + 1) as f64, &feat, 21).unwrap())
            .collect();
        let q_sids: Vec<String> = data
            .tuples()
            .iter()
            .map(|t| datasets::query_sid(&t.id))
            .collect();
        let i_sids: Vec<String> = data
            .tuples()
            .iter()
            .map(|t| datasets::index_sid(&t.id))
            .collect();
        let regs = build_regulator_set(&stores, &q_sids, &i_sids).unwrap();
        assert_eq!(regs.model_count(), 4);
        assert_eq!(regs.regulator_terms(), 8);
        let empty = build_regulator_set(&[], &q_sids, &i_sids).unwrap();
        assert_eq!(empty.model_count(), 0);
    }

    #[test]
    fn missing_id_is_reported_with_model() {
        let (feat, enc) = small_setup();
        let params = encoder::init_params(&enc).unwrap();
        let data = tiny_dataset();
        let store = generate_store(&params, &data, 2, 0.03, &feat, 21).unwrap();
        let err = build_regulator_set(
            &[store],
            &["ghost::q".to_string()],
            &["ghost::ind".to_string()],
        )
        .unwrap_err();
        match err {
            Error::MissingId {
                sentence_id,
                model_id,
            } => {
                assert_eq!(sentence_id, "ghost::q");
                assert_eq!(model_id, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn corrupted_store_is_rejected() {
        let (feat, enc) = small_setup();
        let params = encoder::init_params(&enc).unwrap();
        let store = generate_store(&params, &tiny_dataset(), 0, 0.01, &feat, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        store.save(&path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"not\": \"a record\"}\n");
        std::fs::write(&path, text).unwrap();
        assert!(AugmentedStore::load(&path).is_err());
    }
}
