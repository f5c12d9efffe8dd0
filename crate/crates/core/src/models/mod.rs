//! Trans-TXT, RGCN-EXT, GraphSAGE-EXT and N2V-EXT classifiers, their
//! training loop and probability-level stacking.
//!
//! Every classifier outputs one probability row per node over the label
//! space. The "-EXT" models run on the extended multiplex graph and take
//! the stacked text prediction (transformer + LIW, combined by a logistic
//! regression meta-classifier) as their input features.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

mod ext;
mod logreg;
mod node2vec;
mod rgcn;
mod sage;
mod train;
mod transformer;

pub use ext::{out_of_fold, predict_graph_model, text_stage, ModelConfig, ModelOutput, NodeData, TextOptions, TextStage};
pub use logreg::{concat_features, fit_logreg, FittedLogReg, LogReg};
pub use node2vec::{multiplex_embeddings, node2vec_walks, skipgram_embed, walk_from, N2vConfig, WalkGraph};
pub use rgcn::{fit_rgcn, FittedRgcn, RelationalOperators, Rgcn, RgcnConfig, RgcnLayer};
pub use sage::{fit_sage, sample_mean_operator, sample_operators, FittedSage, Sage, SageConfig};
pub use train::{fit, holdout_split, TrainConfig, TrainReport};
pub use transformer::{fit_transformer, label_prior, positional_encoding, TransTxt, Transformer, TransformerConfig, TransformerTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TransTxt,
    RgcnExt,
    GraphsageExt,
    N2vExt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::TransTxt, ModelKind::RgcnExt, ModelKind::GraphsageExt, ModelKind::N2vExt];

    /// Config / file name.
    pub fn key(self) -> &'static str {
        match self {
            ModelKind::TransTxt => "trans_txt",
            ModelKind::RgcnExt => "rgcn_ext",
            ModelKind::GraphsageExt => "graphsage_ext",
            ModelKind::N2vExt => "n2v_ext",
        }
    }

    /// Name used in report tables.
    pub fn display(self) -> &'static str {
        match self {
            ModelKind::TransTxt => "Trans-TXT",
            ModelKind::RgcnExt => "RGCN-EXT",
            ModelKind::GraphsageExt => "GraphSAGE-EXT",
            ModelKind::N2vExt => "N2V-EXT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.key() == s)
    }
}

/// Per-user label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub user_ids: Vec<String>,
    pub probs: Array2<f64>,
}

impl Predictions {
    /// Most probable label of row `i`; ties go to the lower label id.
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.probs.row(i).as_slice().expect("standard layout"))
    }

    /// CSV `user_id,label_id,prob_top1,p_0,…,p_{L-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "user_id,label_id,prob_top1")?;
        for l in 0..self.probs.ncols() {
            write!(w, ",p_{l}")?;
        }
        writeln!(w)?;
        for (i, id) in self.user_ids.iter().enumerate() {
            let top = self.argmax(i);
            write!(w, "{id},{top},{}", self.probs[[i, top]])?;
            for p in self.probs.row(i) {
                write!(w, ",{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
