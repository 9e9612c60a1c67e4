use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{ForwardOutput, ModelError};

/// Writes one CSV per layer/head (`attn_l{l}_h{h}.csv`, 1-based) with a
/// `t,m0..m{N-1}` header. Returns the written paths.
pub fn export_attention_maps(out: &ForwardOutput, dir: &Path) -> Result<Vec<PathBuf>, ModelError> {
    let io = |e: std::io::Error| ModelError::Io(e.to_string());
    let maps = out
        .maps
        .as_ref()
        .ok_or_else(|| ModelError::Io("forward pass did not keep attention maps".into()))?;
    fs::create_dir_all(dir).map_err(io)?;
    let mut written = Vec::new();
    for (l, heads) in maps.iter().enumerate() {
        for (h, map) in heads.iter().enumerate() {
            let path = dir.join(format!("attn_l{}_h{}.csv", l + 1, h + 1));
            let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io)?);
            let header: Vec<String> = (0..map.cols()).map(|j| format!("m{j}")).collect();
            writeln!(f, "t,{}", header.join(",")).map_err(io)?;
            for t in 0..map.rows() {
                let row: Vec<String> = map.row(t).iter().map(|v| format!("{v:?}")).collect();
                writeln!(f, "{t},{}", row.join(",")).map_err(io)?;
            }
            f.flush().map_err(io)?;
            written.push(path);
        }
    }
    Ok(written)
}
