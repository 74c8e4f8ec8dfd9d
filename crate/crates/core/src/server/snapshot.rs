//! Binary snapshots of a server's day stores, and a CSV dump of its
//! pseudo-ID index.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"PRVSNAP\0"
//! u16    format version
//! u64    server index
//! u32    tree levels
//! u32    day count
//! per day:
//!   u32  day
//!   u32  node count, then per node: u32 level, u32 entries,
//!        per entry: u64 representative, u8 child kind (0 node, 1 leaf), u32 child
//!   u32  leaf count, then per leaf: u32 records,
//!        per record: u32 byte length, u128 pseudo ID, u64 t, u64 x, u64 y
//! ```

use std::io::{Read, Write};

use crate::client::PseudoId;
use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::server::{Child, DayStore, LeafGroup, RecordEntry, TracingServer, TreeEntry, TreeNode};

const MAGIC: &[u8; 8] = b"PRVSNAP\0";
pub const FORMAT_VERSION: u16 = 1;
const RECORD_LEN: u32 = 16 + 3 * 8;

pub fn write_snapshot<W: Write>(server: &TracingServer, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(server.index() as u64).to_le_bytes())?;
    w.write_all(&(server.levels() as u32).to_le_bytes())?;
    w.write_all(&(server.days().count() as u32).to_le_bytes())?;
    for store in server.days() {
        w.write_all(&store.day().to_le_bytes())?;
        w.write_all(&(store.nodes().len() as u32).to_le_bytes())?;
        for node in store.nodes() {
            w.write_all(&(node.level as u32).to_le_bytes())?;
            w.write_all(&(node.entries.len() as u32).to_le_bytes())?;
            for e in &node.entries {
                w.write_all(&e.representative.value().to_le_bytes())?;
                let (kind, id) = match e.child {
                    Child::Node(n) => (0u8, n),
                    Child::Leaf(l) => (1u8, l),
                };
                w.write_all(&[kind])?;
                w.write_all(&id.to_le_bytes())?;
            }
        }
        w.write_all(&(store.leaves().len() as u32).to_le_bytes())?;
        for leaf in store.leaves() {
            w.write_all(&(leaf.records.len() as u32).to_le_bytes())?;
            for r in &leaf.records {
                w.write_all(&RECORD_LEN.to_le_bytes())?;
                w.write_all(&r.pseudo_id.0.to_le_bytes())?;
                for v in [r.t, r.x, r.y] {
                    w.write_all(&v.value().to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Snapshot("truncated snapshot".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn field(&mut self) -> Result<FieldElement> {
        let v = self.u64()?;
        FieldElement::from_canonical(v).ok_or_else(|| Error::Snapshot(format!("non-canonical field element {v}")))
    }

    /// A length read from the file, bounded so garbage cannot force a
    /// huge allocation.
    fn count(&mut self, limit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n > limit {
            return Err(Error::Snapshot(format!("count {n} exceeds {limit}")));
        }
        Ok(n)
    }
}

const MAX_ITEMS: usize = 1 << 26;

pub fn read_snapshot<R: Read>(r: R) -> Result<TracingServer> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Snapshot("not a snapshot file".into()));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != FORMAT_VERSION {
        return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
    }
    let index = r.u64()? as usize;
    let levels = r.u32()? as usize;
    if !(2..=64).contains(&levels) {
        return Err(Error::Snapshot(format!("bad tree height {levels}")));
    }
    let mut server = TracingServer::new(index, levels);
    let days = r.count(1 << 16)?;
    for _ in 0..days {
        let day = r.u32()?;
        if server.day(day).is_some() {
            return Err(Error::Snapshot(format!("day {day} repeated")));
        }
        let n_nodes = r.count(MAX_ITEMS)?;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
        for _ in 0..n_nodes {
            let level = r.u32()? as usize;
            let n_entries = r.count(MAX_ITEMS)?;
            let mut entries = Vec::with_capacity(n_entries.min(1 << 16));
            for _ in 0..n_entries {
                let representative = r.field()?;
                let [kind] = r.bytes::<1>()?;
                let id = r.u32()?;
                let child = match kind {
                    0 => Child::Node(id),
                    1 => Child::Leaf(id),
                    k => return Err(Error::Snapshot(format!("bad child kind {k}"))),
                };
                entries.push(TreeEntry { representative, child });
            }
            nodes.push(TreeNode { level, entries });
        }
        let n_leaves = r.count(MAX_ITEMS)?;
        let mut leaves = Vec::with_capacity(n_leaves.min(1 << 16));
        for _ in 0..n_leaves {
            let n_records = r.count(MAX_ITEMS)?;
            let mut records = Vec::with_capacity(n_records.min(1 << 16));
            for _ in 0..n_records {
                let len = r.u32()?;
                if len != RECORD_LEN {
                    return Err(Error::Snapshot(format!("record length {len}")));
                }
                let pseudo_id = PseudoId(u128::from_le_bytes(r.bytes()?));
                let (t, x, y) = (r.field()?, r.field()?, r.field()?);
                records.push(RecordEntry { pseudo_id, t, x, y });
            }
            leaves.push(LeafGroup { records });
        }
        server.insert_day(DayStore::from_parts(day, levels, nodes, leaves)?);
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Snapshot("trailing bytes".into()));
    }
    Ok(server)
}

/// CSV rows `pseudo_id, day, leaf, slot`, sorted by day then position.
pub fn write_index_csv<W: Write>(server: &TracingServer, w: W) -> Result<()> {
    let mut rows: Vec<_> = server.days().flat_map(|d| d.index()).collect();
    rows.sort_by_key(|(_, r)| *r);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pseudo_id", "day", "leaf", "slot"])?;
    for (id, r) in rows {
        out.write_record([
            id.to_string(),
            r.day.to_string(),
            r.leaf.to_string(),
            r.slot.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
