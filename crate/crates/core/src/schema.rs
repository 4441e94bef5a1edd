use crate::error::{Error, Result};

/// Largest number of data columns a table may have; the per-record column
/// bitmap must fit in one 64-bit cell together with its flag bits.
pub const MAX_DATA_COLUMNS: u32 = 60;

const COLUMN_BITS: u64 = (1 << MAX_DATA_COLUMNS) - 1;
const SNAPSHOT_FLAG: u64 = 1 << 60;
const DELETED_FLAG: u64 = 1 << 61;

/// Per-record schema encoding: one bit per data column, a snapshot flag
/// marking records that hold pre-update original values, and a deleted flag
/// set on consolidated rows whose latest applied update was a delete.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SchemaEncoding(pub u64);

impl SchemaEncoding {
    pub fn new(bits: u64) -> Self {
        debug_assert_eq!(bits & !COLUMN_BITS, 0);
        SchemaEncoding(bits)
    }

    pub fn snapshot(bits: u64) -> Self {
        SchemaEncoding(bits | SNAPSHOT_FLAG)
    }

    pub fn from_cell(cell: u64) -> Self {
        SchemaEncoding(cell)
    }

    pub fn cell(self) -> u64 {
        self.0
    }

    /// Column bitmap without flags.
    pub fn bits(self) -> u64 {
        self.0 & COLUMN_BITS
    }

    pub fn has_column(self, col: u32) -> bool {
        self.bits() & (1 << col) != 0
    }

    pub fn is_snapshot(self) -> bool {
        self.0 & SNAPSHOT_FLAG != 0
    }

    pub fn is_deleted(self) -> bool {
        self.0 & DELETED_FLAG != 0
    }

    /// A delete tail record: every data-column bit clear, not a snapshot.
    pub fn is_delete_record(self) -> bool {
        self.bits() == 0 && !self.is_snapshot()
    }

    pub fn with_deleted(self) -> Self {
        SchemaEncoding(self.0 | DELETED_FLAG)
    }

    pub fn union_bits(self, other: SchemaEncoding) -> Self {
        SchemaEncoding((self.0 & !COLUMN_BITS) | self.bits() | other.bits())
    }
}

/// Start-time cells hold either a commit timestamp or, while the writing
/// transaction is in flight, the transaction id with the pending bit set.
pub const START_PENDING_BIT: u64 = 1 << 63;

/// Start-time value that is never visible to any reader (tombstoned rows).
pub const START_TOMBSTONE: u64 = u64::MAX;

#[inline]
pub fn start_pending(txn_id: u64) -> u64 {
    debug_assert!(txn_id < START_PENDING_BIT);
    START_PENDING_BIT | txn_id
}

#[inline]
pub fn start_is_pending(cell: u64) -> bool {
    cell & START_PENDING_BIT != 0
}

#[inline]
pub fn start_pending_txn(cell: u64) -> u64 {
    cell & !START_PENDING_BIT
}

/// Column layout of a table: `num_data_columns` data columns followed by the
/// meta-data columns (indirection, schema encoding, start time, last updated
/// time, base rid). Every column is one 64-bit cell wide.
#[derive(Clone, Copy, Debug)]
pub struct TableSchema {
    pub table_id: u32,
    pub num_data_columns: u32,
    pub key_column: u32,
}

impl TableSchema {
    pub fn new(table_id: u32, num_data_columns: u32, key_column: u32) -> Result<Self> {
        if num_data_columns == 0 || num_data_columns > MAX_DATA_COLUMNS {
            return Err(Error::InvalidParameter(format!(
                "num_data_columns must be in 1..={MAX_DATA_COLUMNS}, got {num_data_columns}"
            )));
        }
        if key_column >= num_data_columns {
            return Err(Error::InvalidParameter(format!(
                "key_column {key_column} out of range for {num_data_columns} columns"
            )));
        }
        Ok(TableSchema {
            table_id,
            num_data_columns,
            key_column,
        })
    }

    pub fn indirection_col(&self) -> u32 {
        self.num_data_columns
    }

    pub fn schema_col(&self) -> u32 {
        self.num_data_columns + 1
    }

    pub fn start_col(&self) -> u32 {
        self.num_data_columns + 2
    }

    pub fn last_updated_col(&self) -> u32 {
        self.num_data_columns + 3
    }

    pub fn base_rid_col(&self) -> u32 {
        self.num_data_columns + 4
    }

    pub fn total_columns(&self) -> u32 {
        self.num_data_columns + 5
    }

    pub fn all_data_bits(&self) -> u64 {
        (1u64 << self.num_data_columns) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_flags_are_disjoint_from_columns() {
        let e = SchemaEncoding::snapshot(0b0100);
        assert!(e.is_snapshot());
        assert!(!e.is_deleted());
        assert_eq!(e.bits(), 0b0100);
        assert!(!e.is_delete_record());
        let d = SchemaEncoding::new(0);
        assert!(d.is_delete_record());
        assert!(!SchemaEncoding::snapshot(0).is_delete_record());
    }

    #[test]
    fn union_keeps_flags() {
        let merged = SchemaEncoding::new(0b0100)
            .with_deleted()
            .union_bits(SchemaEncoding::new(0b0001));
        assert_eq!(merged.bits(), 0b0101);
        assert!(merged.is_deleted());
    }

    #[test]
    fn schema_bounds() {
        assert!(TableSchema::new(0, 0, 0).is_err());
        assert!(TableSchema::new(0, 61, 0).is_err());
        assert!(TableSchema::new(0, 4, 4).is_err());
        let s = TableSchema::new(0, 4, 0).unwrap();
        assert_eq!(s.indirection_col(), 4);
        assert_eq!(s.base_rid_col(), 8);
        assert_eq!(s.total_columns(), 9);
        assert!(TableSchema::new(0, 60, 59).is_ok());
        assert!(TableSchema::new(0, 1, 0).is_ok());
    }

    #[test]
    fn start_cell_codec() {
        let p = start_pending(42);
        assert!(start_is_pending(p));
        assert_eq!(start_pending_txn(p), 42);
        assert!(!start_is_pending(1304));
    }
}
