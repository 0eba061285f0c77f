//! Data interaction tasks: schema-grounded Text-to-SQL and SQL-to-Text,
//! read-only query execution on an embedded SQL engine, CSV ingestion, and
//! conversion of query results into chart descriptions.

mod chart;
mod db;
mod nl;
mod sql;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smmf::ModelError;

pub use chart::{chart_type_valid, rows_to_chart};
pub use db::{infer_column_type, Database, DEFAULT_ROW_LIMIT, DEMO_FIXTURE_SQL};
pub use nl::{schema_ddl, sql_to_text, text_to_sql};
pub use sql::{extract_sql, referenced_tables, validate_sql, MAX_SQL_CHARS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("connection error: {0}")]
    Connection(String),
    #[error("schema has no tables")]
    EmptySchema,
    #[error("model response contains no SQL")]
    NoSqlInResponse,
    #[error("unsafe SQL: {0}")]
    UnsafeSql(String),
    #[error("SQL execution failed: {0}")]
    SqlExecution(String),
    #[error("CSV parse error at line {line}: {message}")]
    CsvParse { line: u64, message: String },
    #[error("table `{0}` already exists")]
    DuplicateTable(String),
    #[error("invalid table name `{0}`")]
    InvalidTableName(String),
    #[error("not chartable: {0}")]
    NotChartable(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Real,
    Text,
    Date,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(self, Self::Integer | Self::Real)
    }

    pub fn sql_name(self) -> &'static str {
        match self {
            Self::Integer => "INTEGER",
            Self::Real => "REAL",
            Self::Text => "TEXT",
            Self::Date => "DATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, column_type: ColumnType) -> Self {
        Self { name: name.into(), column_type }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default)]
    pub primary_key: Option<String>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub tables: Vec<TableSchema>,
}

impl SchemaDescriptor {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// A single result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn to_label(&self) -> String {
        match self {
            Cell::Null => "(null)".to_string(),
            Cell::Integer(i) => i.to_string(),
            Cell::Real(r) => r.to_string(),
            Cell::Text(t) => t.clone(),
        }
    }

    fn conforms(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Cell::Null, _)
                | (Cell::Integer(_), ColumnType::Integer)
                | (Cell::Real(_), ColumnType::Real)
                | (Cell::Text(_), ColumnType::Text | ColumnType::Date)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    /// Set when rows were cut at the row limit.
    #[serde(default)]
    pub truncated: bool,
}

impl ResultTable {
    pub fn new(columns: Vec<Column>, rows: Vec<Vec<Cell>>) -> Result<Self, DataError> {
        let table = Self { columns, rows, truncated: false };
        table.check()?;
        Ok(table)
    }

    /// Verifies row arity and cell types.
    pub fn check(&self) -> Result<(), DataError> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(DataError::SqlExecution(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    self.columns.len()
                )));
            }
            for (cell, col) in row.iter().zip(&self.columns) {
                if !cell.conforms(col.column_type) {
                    return Err(DataError::SqlExecution(format!(
                        "row {i} column `{}` holds {cell:?}, not {:?}",
                        col.name, col.column_type
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartType {
    Donut,
    Bar,
    Area,
    Line,
    Table,
}

impl ChartType {
    pub const ALL: [ChartType; 5] = [Self::Donut, Self::Bar, Self::Area, Self::Line, Self::Table];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Donut => "donut",
            Self::Bar => "bar",
            Self::Area => "area",
            Self::Line => "line",
            Self::Table => "table",
        }
    }

    /// First chart type named in free text, e.g. a step description.
    pub fn mentioned_in(text: &str) -> Option<ChartType> {
        let lower = text.to_lowercase();
        Self::ALL
            .into_iter()
            .filter_map(|t| lower.find(&format!("{} chart", t.as_str())).map(|at| (at, t)))
            .min_by_key(|(at, _)| *at)
            .map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub label: String,
    pub value: f64,
}

/// Declarative chart description shared by the terminal renderer, the SSE
/// stream and the web client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_type: ChartType,
    pub title: String,
    pub dimension: String,
    pub measure: String,
    pub data: Vec<DataPoint>,
}

/// Most categories a donut may show.
pub const DONUT_MAX_CATEGORIES: usize = 12;

impl ChartSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut labels = std::collections::HashSet::new();
        for p in &self.data {
            if !labels.insert(p.label.as_str()) {
                return Err(DataError::NotChartable(format!("duplicate label `{}`", p.label)));
            }
            if !p.value.is_finite() {
                return Err(DataError::NotChartable(format!("value for `{}` is not finite", p.label)));
            }
        }
        if self.chart_type == ChartType::Donut {
            if self.data.len() > DONUT_MAX_CATEGORIES {
                return Err(DataError::NotChartable(format!(
                    "donut supports at most {DONUT_MAX_CATEGORIES} categories, got {}",
                    self.data.len()
                )));
            }
            if self.data.iter().any(|p| p.value < 0.0) {
                return Err(DataError::NotChartable("donut values must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_spec_json_field_names() {
        let spec = ChartSpec {
            chart_type: ChartType::Donut,
            title: "t".into(),
            dimension: "d".into(),
            measure: "m".into(),
            data: vec![DataPoint { label: "A".into(), value: 30.0 }],
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            json,
            r#"{"chart_type":"donut","title":"t","dimension":"d","measure":"m","data":[{"label":"A","value":30.0}]}"#
        );
    }

    #[test]
    fn chart_spec_invariants() {
        let mut spec = ChartSpec {
            chart_type: ChartType::Donut,
            title: "t".into(),
            dimension: "d".into(),
            measure: "m".into(),
            data: vec![DataPoint { label: "A".into(), value: -1.0 }],
        };
        assert!(spec.validate().is_err());
        spec.chart_type = ChartType::Bar;
        assert!(spec.validate().is_ok());
        spec.data.push(DataPoint { label: "A".into(), value: 1.0 });
        assert!(spec.validate().is_err());
        spec.data[1] = DataPoint { label: "B".into(), value: f64::NAN };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn chart_type_mentions() {
        assert_eq!(ChartType::mentioned_in("Create a donut chart of sales"), Some(ChartType::Donut));
        assert_eq!(ChartType::mentioned_in("an Area chart, then a bar chart"), Some(ChartType::Area));
        assert_eq!(ChartType::mentioned_in("summarize"), None);
    }

    #[test]
    fn result_table_checks_arity_and_types() {
        let cols = vec![Column::new("a", ColumnType::Integer)];
        assert!(ResultTable::new(cols.clone(), vec![vec![Cell::Integer(1)], vec![Cell::Null]]).is_ok());
        assert!(ResultTable::new(cols.clone(), vec![vec![]]).is_err());
        assert!(ResultTable::new(cols, vec![vec![Cell::Text("x".into())]]).is_err());
    }

    #[test]
    fn cells_serialize_untagged() {
        let row = vec![Cell::Null, Cell::Integer(3), Cell::Real(2.5), Cell::Text("x".into())];
        let json = serde_json::to_string(&row).unwrap();
        assert_eq!(json, r#"[null,3,2.5,"x"]"#);
        let back: Vec<Cell> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, row);
    }
}
