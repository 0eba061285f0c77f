use super::{ChartSpec, ChartType, ColumnType, DataError, DataPoint, ResultTable, DONUT_MAX_CATEGORIES};

/// Rows above which an inferred text chart falls back from donut to bar.
const DONUT_INFER_MAX_ROWS: usize = 8;

/// Whether `chart_type` can display data with this dimension type and values.
pub fn chart_type_valid(chart_type: ChartType, dimension: ColumnType, values: &[f64]) -> bool {
    match chart_type {
        ChartType::Donut => values.len() <= DONUT_MAX_CATEGORIES && values.iter().all(|v| *v >= 0.0),
        ChartType::Area | ChartType::Line => dimension == ColumnType::Date,
        ChartType::Bar | ChartType::Table => true,
    }
}

/// Turns a (dimension, measure) result into a chart.
///
/// The dimension is the first text or date column, the measure the first
/// numeric one. A valid `hint` wins; otherwise dates give an area chart, up
/// to eight non-negative categories a donut, anything else a bar chart.
pub fn rows_to_chart(table: &ResultTable, hint: Option<ChartType>) -> Result<ChartSpec, DataError> {
    if table.columns.len() < 2 {
        return Err(DataError::NotChartable("need a dimension and a measure column".into()));
    }
    if table.rows.is_empty() {
        return Err(DataError::NotChartable("no rows".into()));
    }
    let dim_idx = table
        .columns
        .iter()
        .position(|c| matches!(c.column_type, ColumnType::Text | ColumnType::Date))
        .ok_or_else(|| DataError::NotChartable("no text or date column".into()))?;
    let measure_idx = table
        .columns
        .iter()
        .position(|c| c.column_type.is_numeric())
        .ok_or_else(|| DataError::NotChartable("no numeric column".into()))?;
    let dimension = &table.columns[dim_idx];
    let measure = &table.columns[measure_idx];

    let mut data = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let value = row[measure_idx]
            .as_f64()
            .ok_or_else(|| DataError::NotChartable(format!("null value in `{}`", measure.name)))?;
        data.push(DataPoint { label: row[dim_idx].to_label(), value });
    }
    let values: Vec<f64> = data.iter().map(|p| p.value).collect();

    let chart_type = match hint {
        Some(h) if chart_type_valid(h, dimension.column_type, &values) => h,
        _ if dimension.column_type == ColumnType::Date => ChartType::Area,
        _ if values.len() <= DONUT_INFER_MAX_ROWS && values.iter().all(|v| *v >= 0.0) => ChartType::Donut,
        _ => ChartType::Bar,
    };
    let spec = ChartSpec {
        chart_type,
        title: format!("{} by {}", measure.name, dimension.name),
        dimension: dimension.name.clone(),
        measure: measure.name.clone(),
        data,
    };
    spec.validate()?;
    Ok(spec)
}
