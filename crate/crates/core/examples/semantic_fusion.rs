//! Fusing the three description embeddings of each class into one vector.

use fsvae::semantics::{fuse_all, EmbeddingRecord, Kind, SemanticTable};

fn main() -> fsvae::Result<()> {
    let mut records = Vec::new();
    for class_id in 0..3u32 {
        for (k, kind) in Kind::ALL.into_iter().enumerate() {
            let vector = (0..4).map(|d| (class_id * 10 + k as u32) as f64 + d as f64 * 0.1).collect();
            records.push(EmbeddingRecord { class_id, kind, vector });
        }
    }
    let table = SemanticTable::from_records(records)?;
    println!("classes {}, fused dimension {}", table.len(), table.fused_dim());
    for (class_id, v) in fuse_all(&table)? {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("class {class_id}: {} values, norm {norm:.4}", v.len());
    }
    Ok(())
}
