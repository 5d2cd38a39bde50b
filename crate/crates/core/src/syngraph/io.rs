use std::path::Path;

use super::{DatasetMeta, Graph, GraphDataset, ShiftKind, Split};
use crate::envelope::{ByteReader, ByteWriter, Envelope};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"E2AGRAPH";

fn write_graph(w: &mut ByteWriter, g: &Graph) {
    w.u64(g.n_nodes as u64);
    w.u64(g.d_in as u64);
    let flat: Vec<usize> = g.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    w.usizes(&flat);
    w.f64s(&g.node_features);
    w.u64(g.label as u64);
    w.i64(g.env_id);
}

fn read_graph(r: &mut ByteReader) -> Result<Graph> {
    let n = r.u64()? as usize;
    let d_in = r.u64()? as usize;
    let flat = r.usizes()?;
    if flat.len() % 2 != 0 {
        return Err(Error::Format("odd edge endpoint count".into()));
    }
    let feats = r.f64s()?;
    let label = r.u64()? as usize;
    let env_id = r.i64()?;
    Graph::new(
        n,
        flat.chunks(2).map(|p| (p[0], p[1])),
        feats,
        d_in,
        label,
        env_id,
    )
    .map_err(|e| Error::Format(format!("invalid graph: {e}")))
}

pub fn dataset_to_bytes(ds: &GraphDataset) -> Vec<u8> {
    let mut env = Envelope::new(*DATASET_MAGIC);
    let mut w = ByteWriter::default();
    w.str(&ds.meta.shift.to_string());
    w.u64(ds.meta.classes as u64);
    w.u64(ds.meta.d_in as u64);
    w.u64(ds.meta.seed);
    env.push("meta", w.finish());
    for split in Split::ALL {
        let graphs = ds.split(split);
        let mut w = ByteWriter::default();
        w.u64(graphs.len() as u64);
        for g in graphs {
            write_graph(&mut w, g);
        }
        env.push(&format!("split:{split}"), w.finish());
    }
    env.to_bytes()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<GraphDataset> {
    let env = Envelope::from_bytes(bytes, DATASET_MAGIC)?;
    let mut r = ByteReader::new(env.section("meta")?);
    let shift: ShiftKind = r
        .str()?
        .parse()
        .map_err(|e| Error::Format(format!("{e}")))?;
    let meta = DatasetMeta {
        shift,
        classes: r.u64()? as usize,
        d_in: r.u64()? as usize,
        seed: r.u64()?,
    };
    let mut ds = GraphDataset {
        meta,
        train: Vec::new(),
        val: Vec::new(),
        id_test: Vec::new(),
        ood_test: Vec::new(),
    };
    for split in Split::ALL {
        let mut r = ByteReader::new(env.section(&format!("split:{split}"))?);
        let n = r.u64()? as usize;
        let graphs = (0..n).map(|_| read_graph(&mut r)).collect::<Result<Vec<_>>>()?;
        if !r.is_empty() {
            return Err(Error::Format(format!("trailing bytes in split {split}")));
        }
        *ds.split_mut(split) = graphs;
    }
    Ok(ds)
}

pub fn dataset_save(ds: &GraphDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)).map_err(|e| Error::io(path, e))
}

pub fn dataset_load(path: &Path) -> Result<GraphDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    dataset_from_bytes(&bytes)
}
