use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};

use super::sql::validate_sql;
use super::{Cell, Column, ColumnType, DataError, ForeignKey, ResultTable, SchemaDescriptor, TableSchema};

pub const DEFAULT_ROW_LIMIT: usize = 10_000;

/// The committed demo sales dataset.
pub const DEMO_FIXTURE_SQL: &str = include_str!("../../assets/demo_sales.sql");

fn exec_err(e: impl std::fmt::Display) -> DataError {
    DataError::SqlExecution(e.to_string())
}

fn conn_err(e: impl std::fmt::Display) -> DataError {
    DataError::Connection(e.to_string())
}

/// Handle to the embedded SQL engine (SQLite).
///
/// Queries from chat run on a connection in read-only mode: a separate
/// read-only connection for file databases, `query_only` for in-memory ones.
pub struct Database {
    path: Option<PathBuf>,
    conn: Mutex<Option<Connection>>,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database").field("path", &self.path).finish_non_exhaustive()
    }
}

impl Database {
    /// Opens or creates a database file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref().to_path_buf();
        let conn = Connection::open(&path).map_err(conn_err)?;
        conn.execute_batch("PRAGMA foreign_keys = ON;").map_err(conn_err)?;
        Ok(Self { path: Some(path), conn: Mutex::new(Some(conn)) })
    }

    pub fn open_in_memory() -> Result<Self, DataError> {
        let conn = Connection::open_in_memory().map_err(conn_err)?;
        Ok(Self { path: None, conn: Mutex::new(Some(conn)) })
    }

    /// In-memory database loaded with the demo sales fixture.
    pub fn demo() -> Result<Self, DataError> {
        let db = Self::open_in_memory()?;
        db.execute_script(DEMO_FIXTURE_SQL)?;
        Ok(db)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn close(&self) {
        self.conn.lock().unwrap().take();
    }

    fn with_conn<T>(&self, f: impl FnOnce(&Connection) -> Result<T, DataError>) -> Result<T, DataError> {
        let guard = self.conn.lock().unwrap();
        let conn = guard.as_ref().ok_or_else(|| DataError::Connection("connection is closed".into()))?;
        f(conn)
    }

    /// Runs trusted DDL/DML, e.g. fixture setup. Never reached from chat.
    pub fn execute_script(&self, sql: &str) -> Result<(), DataError> {
        self.with_conn(|c| c.execute_batch(sql).map_err(exec_err))
    }

    pub fn table_exists(&self, name: &str) -> Result<bool, DataError> {
        self.with_conn(|c| table_exists(c, name))
    }

    /// Full catalog, tables ordered by name.
    pub fn describe_schema(&self) -> Result<SchemaDescriptor, DataError> {
        self.with_conn(describe)
    }

    /// Validates and runs a chat-originated query read-only.
    pub fn execute_sql(&self, sql: &str, row_limit: usize) -> Result<ResultTable, DataError> {
        validate_sql(sql)?;
        self.run_read_only(sql, row_limit)
    }

    /// Runs a query with the engine in read-only mode, without the keyword
    /// check. Writes fail inside the engine.
    pub fn run_read_only(&self, sql: &str, row_limit: usize) -> Result<ResultTable, DataError> {
        match &self.path {
            Some(path) => {
                // the primary handle must still be open
                self.with_conn(|_| Ok(()))?;
                let conn = Connection::open_with_flags(
                    path,
                    OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
                )
                .map_err(conn_err)?;
                conn.execute_batch("PRAGMA query_only = ON;").map_err(conn_err)?;
                query(&conn, sql, row_limit)
            }
            None => self.with_conn(|conn| {
                conn.execute_batch("PRAGMA query_only = ON;").map_err(conn_err)?;
                let result = query(conn, sql, row_limit);
                conn.execute_batch("PRAGMA query_only = OFF;").map_err(conn_err)?;
                result
            }),
        }
    }

    /// Creates `table_name` from a CSV file with a header row and returns the
    /// updated schema. Column types are inferred per column.
    pub fn load_csv(&self, path: impl AsRef<Path>, table_name: &str) -> Result<SchemaDescriptor, DataError> {
        let data = std::fs::read(path.as_ref()).map_err(|e| DataError::Io(e.to_string()))?;
        self.load_csv_bytes(&data, table_name)
    }

    pub fn load_csv_bytes(&self, data: &[u8], table_name: &str) -> Result<SchemaDescriptor, DataError> {
        if !valid_identifier(table_name) {
            return Err(DataError::InvalidTableName(table_name.to_string()));
        }
        let (header, rows) = read_csv(data)?;
        let types: Vec<ColumnType> =
            (0..header.len()).map(|i| infer_column_type(rows.iter().map(|r| r[i].as_str()))).collect();
        self.with_conn(|conn| {
            if table_exists(conn, table_name)? {
                return Err(DataError::DuplicateTable(table_name.to_string()));
            }
            let cols: Vec<String> = header
                .iter()
                .zip(&types)
                .map(|(name, ty)| format!("{} {}", quote_ident(name), ty.sql_name()))
                .collect();
            let tx = conn.unchecked_transaction().map_err(exec_err)?;
            tx.execute(&format!("CREATE TABLE {} ({})", quote_ident(table_name), cols.join(", ")), [])
                .map_err(exec_err)?;
            {
                let placeholders = vec!["?"; header.len()].join(", ");
                let mut stmt = tx
                    .prepare(&format!("INSERT INTO {} VALUES ({placeholders})", quote_ident(table_name)))
                    .map_err(exec_err)?;
                for row in &rows {
                    let values: Vec<rusqlite::types::Value> =
                        row.iter().zip(&types).map(|(cell, ty)| csv_value(cell, *ty)).collect();
                    stmt.execute(rusqlite::params_from_iter(values)).map_err(exec_err)?;
                }
            }
            tx.commit().map_err(exec_err)?;
            describe(conn)
        })
    }
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn table_exists(conn: &Connection, name: &str) -> Result<bool, DataError> {
    let n: i64 = conn
        .query_row(
            "SELECT COUNT(*) FROM sqlite_master WHERE type IN ('table', 'view') AND name = ?1 COLLATE NOCASE",
            [name],
            |r| r.get(0),
        )
        .map_err(exec_err)?;
    Ok(n > 0)
}

fn declared_type(decl: &str) -> ColumnType {
    let upper = decl.to_ascii_uppercase();
    if upper.contains("INT") {
        ColumnType::Integer
    } else if upper.contains("DATE") || upper.contains("TIME") {
        ColumnType::Date
    } else if ["REAL", "FLOA", "DOUB", "NUMERIC", "DECIMAL"].iter().any(|k| upper.contains(k)) {
        ColumnType::Real
    } else {
        ColumnType::Text
    }
}

fn describe(conn: &Connection) -> Result<SchemaDescriptor, DataError> {
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")
        .map_err(exec_err)?;
    let names: Vec<String> =
        stmt.query_map([], |r| r.get(0)).map_err(exec_err)?.collect::<Result<_, _>>().map_err(exec_err)?;
    let mut tables = Vec::with_capacity(names.len());
    for name in names {
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(&name))).map_err(exec_err)?;
        let cols: Vec<(String, String, i64)> = info
            .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, i64>(5)?)))
            .map_err(exec_err)?
            .collect::<Result<_, _>>()
            .map_err(exec_err)?;
        let pk_cols: Vec<&String> = cols.iter().filter(|c| c.2 > 0).map(|c| &c.0).collect();
        let primary_key = (pk_cols.len() == 1).then(|| pk_cols[0].clone());

        let mut fk_stmt =
            conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&name))).map_err(exec_err)?;
        let fks: Vec<(String, String, Option<String>)> = fk_stmt
            .query_map([], |r| Ok((r.get::<_, String>(3)?, r.get::<_, String>(2)?, r.get::<_, Option<String>>(4)?)))
            .map_err(exec_err)?
            .collect::<Result<_, _>>()
            .map_err(exec_err)?;
        let mut foreign_keys = Vec::new();
        for (column, ref_table, ref_column) in fks {
            let ref_column = match ref_column {
                Some(c) => c,
                // implicit reference to the parent's primary key
                None => conn
                    .query_row(
                        &format!("SELECT name FROM pragma_table_info({}) WHERE pk = 1", quote_literal(&ref_table)),
                        [],
                        |r| r.get(0),
                    )
                    .map_err(exec_err)?,
            };
            foreign_keys.push(ForeignKey { column, ref_table, ref_column });
        }
        foreign_keys.sort_by(|a, b| a.column.cmp(&b.column));
        tables.push(TableSchema {
            name,
            columns: cols.into_iter().map(|(n, decl, _)| Column::new(n, declared_type(&decl))).collect(),
            primary_key,
            foreign_keys,
        });
    }
    Ok(SchemaDescriptor { tables })
}

fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn query(conn: &Connection, sql: &str, row_limit: usize) -> Result<ResultTable, DataError> {
    let mut stmt = conn.prepare(sql).map_err(exec_err)?;
    if !stmt.readonly() {
        return Err(DataError::SqlExecution("statement would modify the database".into()));
    }
    let names: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let decls: Vec<Option<ColumnType>> = stmt.columns().iter().map(|c| c.decl_type().map(declared_type)).collect();
    let width = names.len();
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut truncated = false;
    let mut cursor = stmt.query([]).map_err(exec_err)?;
    while let Some(row) = cursor.next().map_err(exec_err)? {
        if rows.len() == row_limit {
            truncated = true;
            break;
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(match row.get_ref(i).map_err(exec_err)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Integer(v),
                ValueRef::Real(v) => Cell::Real(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Text(format!("<{} bytes>", b.len())),
            });
        }
        rows.push(cells);
    }
    let mut columns = Vec::with_capacity(width);
    for (i, name) in names.into_iter().enumerate() {
        let ty = decls[i].unwrap_or_else(|| observed_type(rows.iter().map(|r| &r[i])));
        let ty = conform_column(&mut rows, i, ty);
        columns.push(Column::new(name, ty));
    }
    Ok(ResultTable { columns, rows, truncated })
}

/// Type of a computed column from its values.
fn observed_type<'a>(cells: impl Iterator<Item = &'a Cell>) -> ColumnType {
    let mut ty: Option<ColumnType> = None;
    let mut all_dates = true;
    for cell in cells {
        let this = match cell {
            Cell::Null => continue,
            Cell::Integer(_) => ColumnType::Integer,
            Cell::Real(_) => ColumnType::Real,
            Cell::Text(t) => {
                all_dates &= parse_date(t);
                ColumnType::Text
            }
        };
        ty = Some(match (ty, this) {
            (None, t) => t,
            (Some(a), b) if a == b => a,
            (Some(ColumnType::Integer), ColumnType::Real) | (Some(ColumnType::Real), ColumnType::Integer) => {
                ColumnType::Real
            }
            _ => ColumnType::Text,
        });
    }
    match ty {
        Some(ColumnType::Text) if all_dates => ColumnType::Date,
        Some(t) => t,
        None => ColumnType::Text,
    }
}

/// Coerces cells to `ty` where lossless, otherwise degrades the column to text.
fn conform_column(rows: &mut [Vec<Cell>], i: usize, ty: ColumnType) -> ColumnType {
    let fits = |c: &Cell| {
        matches!(
            (c, ty),
            (Cell::Null, _)
                | (Cell::Integer(_), ColumnType::Integer | ColumnType::Real)
                | (Cell::Real(_), ColumnType::Real)
                | (Cell::Text(_), ColumnType::Text | ColumnType::Date)
        )
    };
    if rows.iter().all(|r| fits(&r[i])) {
        if ty == ColumnType::Real {
            for r in rows.iter_mut() {
                if let Cell::Integer(v) = r[i] {
                    r[i] = Cell::Real(v as f64);
                }
            }
        }
        return ty;
    }
    for r in rows.iter_mut() {
        if !matches!(r[i], Cell::Null | Cell::Text(_)) {
            r[i] = Cell::Text(r[i].to_label());
        }
    }
    ColumnType::Text
}

pub(crate) fn parse_date(s: &str) -> bool {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
        || NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").is_ok_and(|_| s.len() == 7)
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").is_ok()
        || DateTime::parse_from_rfc3339(s).is_ok()
}

fn parses_integer(s: &str) -> bool {
    s.trim().parse::<i64>().is_ok()
}

fn parses_real(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok_and(f64::is_finite)
}

/// First of integer, real, date (ISO-8601), text that every non-empty cell
/// parses as.
pub fn infer_column_type<'a>(cells: impl IntoIterator<Item = &'a str>) -> ColumnType {
    let cells: Vec<&str> = cells.into_iter().filter(|c| !c.trim().is_empty()).collect();
    if cells.is_empty() {
        ColumnType::Text
    } else if cells.iter().all(|c| parses_integer(c)) {
        ColumnType::Integer
    } else if cells.iter().all(|c| parses_real(c)) {
        ColumnType::Real
    } else if cells.iter().all(|c| parse_date(c)) {
        ColumnType::Date
    } else {
        ColumnType::Text
    }
}

fn csv_value(cell: &str, ty: ColumnType) -> rusqlite::types::Value {
    use rusqlite::types::Value;
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        return Value::Null;
    }
    match ty {
        ColumnType::Integer => trimmed.parse().map(Value::Integer).unwrap_or(Value::Null),
        ColumnType::Real => trimmed.parse().map(Value::Real).unwrap_or(Value::Null),
        ColumnType::Date => Value::Text(trimmed.to_string()),
        ColumnType::Text => Value::Text(cell.to_string()),
    }
}

type CsvRows = (Vec<String>, Vec<Vec<String>>);

fn read_csv(data: &[u8]) -> Result<CsvRows, DataError> {
    let text = std::str::from_utf8(data).map_err(|e| DataError::CsvParse { line: 1, message: e.to_string() })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| DataError::CsvParse {
        line: e.position().map(|p| p.line()).unwrap_or(1),
        message: e.to_string(),
    };
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(DataError::CsvParse { line: 1, message: "header row has an empty column name".into() });
    }
    let mut seen = std::collections::HashSet::new();
    for h in &header {
        if !seen.insert(h.to_lowercase()) {
            return Err(DataError::CsvParse { line: 1, message: format!("duplicate column `{h}`") });
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
