//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "SAGECKPT"
//! version   u32      1
//! snapshot  u64
//! norm      u8       0 = L1, 1 = L2
//! entities  u64 count, then per name: u32 byte length + UTF-8 bytes
//! relations same as entities
//! 2 tables  entity table then relation table: u64 rows, u64 dim, rows*dim f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::Vocabulary;
use crate::model::{EmbeddingTable, KgeModel, Norm, TableRole};

const MAGIC: &[u8; 8] = b"SAGECKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub snapshot: usize,
    pub vocab: Vocabulary,
    pub model: KgeModel,
}

fn write_names(w: &mut impl Write, names: &[String]) -> std::io::Result<()> {
    w.write_all(&(names.len() as u64).to_le_bytes())?;
    for n in names {
        w.write_all(&(n.len() as u32).to_le_bytes())?;
        w.write_all(n.as_bytes())?;
    }
    Ok(())
}

fn write_table(w: &mut impl Write, t: &EmbeddingTable) -> std::io::Result<()> {
    w.write_all(&(t.rows() as u64).to_le_bytes())?;
    w.write_all(&(t.dim() as u64).to_le_bytes())?;
    for v in t.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save(path: &Path, snapshot: usize, vocab: &Vocabulary, model: &KgeModel) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(snapshot as u64).to_le_bytes())?;
        w.write_all(&[match model.norm {
            Norm::L1 => 0u8,
            Norm::L2 => 1u8,
        }])?;
        write_names(&mut w, vocab.entity_names())?;
        write_names(&mut w, vocab.relation_names())?;
        write_table(&mut w, &model.entities)?;
        write_table(&mut w, &model.relations)?;
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn names(&mut self) -> Result<Vec<String>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = self.u32()? as usize;
            let mut buf = vec![0u8; len];
            self.inner
                .read_exact(&mut buf)
                .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
            out.push(String::from_utf8(buf).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?);
        }
        Ok(out)
    }

    fn table(&mut self, role: TableRole) -> Result<EmbeddingTable> {
        let rows = self.u64()? as usize;
        let dim = self.u64()? as usize;
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::Checkpoint("table size overflows".into()))?;
        let mut values = Vec::with_capacity(len.min(1 << 26));
        for _ in 0..len {
            values.push(f64::from_le_bytes(self.bytes()?));
        }
        EmbeddingTable::from_values(rows, dim, role, values)
            .ok_or_else(|| Error::Checkpoint(format!("bad table shape {rows} x {dim}")))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let snapshot = r.u64()? as usize;
    let norm = match r.bytes::<1>()?[0] {
        0 => Norm::L1,
        1 => Norm::L2,
        b => return Err(Error::Checkpoint(format!("unknown norm tag {b}"))),
    };
    let vocab = Vocabulary::from_names(r.names()?, r.names()?)?;
    let entities = r.table(TableRole::Entity)?;
    let relations = r.table(TableRole::Relation)?;
    if entities.rows() > vocab.num_entities() || relations.rows() > vocab.num_relations() {
        return Err(Error::Checkpoint("tables have more rows than the vocabulary".into()));
    }
    let model = KgeModel::new(entities, relations, norm).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { snapshot, vocab, model })
}
