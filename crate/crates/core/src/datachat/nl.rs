use crate::smmf::{ChatMessage, ModelClient, ModelRequest};
use crate::template::fill;

use super::sql::{extract_sql, referenced_tables, validate_sql};
use super::{DataError, SchemaDescriptor};

const TEXT_TO_SQL_TEMPLATE: &str = include_str!("../../prompts/text_to_sql.txt");
const SQL_TO_TEXT_TEMPLATE: &str = include_str!("../../prompts/sql_to_text.txt");

/// Schema as `CREATE TABLE` blocks, one per table, foreign keys as comments.
pub fn schema_ddl(schema: &SchemaDescriptor) -> String {
    let mut blocks = Vec::with_capacity(schema.tables.len());
    for table in &schema.tables {
        let mut out = format!("CREATE TABLE {} (\n", table.name);
        let cols: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                let pk = if table.primary_key.as_deref() == Some(c.name.as_str()) { " PRIMARY KEY" } else { "" };
                format!("  {} {}{pk}", c.name, c.column_type.sql_name())
            })
            .collect();
        out.push_str(&cols.join(",\n"));
        out.push_str("\n);");
        for fk in &table.foreign_keys {
            out.push_str(&format!("\n-- {}.{} references {}.{}", table.name, fk.column, fk.ref_table, fk.ref_column));
        }
        blocks.push(out);
    }
    blocks.join("\n\n")
}

pub(crate) fn text_to_sql_prompt(question: &str, schema: &SchemaDescriptor) -> String {
    fill(TEXT_TO_SQL_TEMPLATE, &[("{schema}", &schema_ddl(schema)), ("{question}", question.trim())])
}

/// Asks the model for a query answering `question` over `schema`.
pub fn text_to_sql(
    question: &str,
    schema: &SchemaDescriptor,
    client: &dyn ModelClient,
    model: &str,
) -> Result<String, DataError> {
    if schema.tables.is_empty() {
        return Err(DataError::EmptySchema);
    }
    let req = ModelRequest::new(model, vec![ChatMessage::user(text_to_sql_prompt(question, schema))]);
    let resp = client.complete(&req)?;
    let sql = extract_sql(&resp.content).ok_or(DataError::NoSqlInResponse)?;
    validate_sql(&sql)?;
    Ok(sql)
}

/// Model explanation of a query. An empty reply falls back to naming the
/// tables the query reads.
pub fn sql_to_text(
    sql: &str,
    schema: &SchemaDescriptor,
    client: &dyn ModelClient,
    model: &str,
) -> Result<String, DataError> {
    validate_sql(sql)?;
    let prompt = fill(SQL_TO_TEXT_TEMPLATE, &[("{schema}", &schema_ddl(schema)), ("{sql}", sql.trim())]);
    let resp = client.complete(&ModelRequest::new(model, vec![ChatMessage::user(prompt)]))?;
    let text = resp.content.trim();
    if !text.is_empty() {
        return Ok(text.to_string());
    }
    let tables = referenced_tables(sql);
    Ok(if tables.is_empty() {
        "This query reads no tables.".to_string()
    } else {
        format!("This query reads from {}.", tables.join(", "))
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::datachat::Database;
    use crate::smmf::{Gateway, MockBackend, MockScript, Registry, SystemClock, WorkerSpec, MOCK_ENDPOINT};

    fn gateway(script: MockScript) -> Gateway {
        let gw = Gateway::new(Arc::new(Registry::new(Arc::new(SystemClock))));
        gw.register(WorkerSpec::new("mock", MOCK_ENDPOINT), Arc::new(MockBackend::new(script))).unwrap();
        gw
    }

    fn demo_schema() -> SchemaDescriptor {
        Database::demo().unwrap().describe_schema().unwrap()
    }

    #[test]
    fn ddl_lists_tables_and_fk_comments() {
        let ddl = schema_ddl(&demo_schema());
        assert!(ddl.starts_with("CREATE TABLE orders (\n  id INTEGER PRIMARY KEY,\n"));
        assert!(ddl.contains("-- orders.user_id references users.id"));
        assert_eq!(ddl.matches("CREATE TABLE").count(), 3);
    }

    #[test]
    fn fenced_reply_becomes_sql() {
        let sql = "SELECT category, SUM(amount) FROM orders JOIN products ON orders.product_id = products.id GROUP BY category";
        let gw = gateway(
            MockScript::default().with("contains:total sales by product category", &format!("```sql\n{sql}\n```")),
        );
        let got = text_to_sql("What are total sales by product category?", &demo_schema(), &gw, "mock").unwrap();
        assert_eq!(got, sql);
    }

    #[test]
    fn no_sql_and_unsafe_sql() {
        let gw = gateway(
            MockScript::default()
                .with("contains:weather", "I only know about sales.")
                .with("contains:wipe", "```sql\nSELECT 1; DROP TABLE orders\n```"),
        );
        let schema = demo_schema();
        assert_eq!(text_to_sql("weather?", &schema, &gw, "mock"), Err(DataError::NoSqlInResponse));
        assert!(matches!(text_to_sql("wipe it", &schema, &gw, "mock"), Err(DataError::UnsafeSql(_))));
        assert_eq!(text_to_sql("x", &SchemaDescriptor::default(), &gw, "mock"), Err(DataError::EmptySchema));
    }

    #[test]
    fn explanation_scripted_or_fallback() {
        let gw = gateway(MockScript::default().with("contains:FROM users", "Counts users."));
        let schema = demo_schema();
        assert_eq!(sql_to_text("SELECT COUNT(*) FROM users", &schema, &gw, "mock").unwrap(), "Counts users.");
        assert_eq!(
            sql_to_text("SELECT * FROM orders o JOIN products p ON o.product_id = p.id", &schema, &gw, "mock").unwrap(),
            "This query reads from orders, products."
        );
        assert!(matches!(sql_to_text("DELETE FROM users", &schema, &gw, "mock"), Err(DataError::UnsafeSql(_))));
    }
}
