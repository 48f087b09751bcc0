use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ParamSpec, Tool, ToolContext, ToolDescriptor, ToolValue, ValidatedArgs};
use crate::causal::{
    did_event_study, did_static, iv_2sls, ps_matching, ps_regression_adjustment, rdd_fuzzy,
    rdd_sharp, DidSpec, Estimand, EventStudySpec, IvSpec, Kernel, LagIndexing, MatchingOptions,
    PsRegressionSpec, RddSpec, TrimRule,
};
use crate::data::{
    derive_column, describe, load_csv, median_split, one_hot_encode, CellValue, CsvOptions,
    DataTable, Transform,
};
use crate::error::{EconError, Result};
use crate::regression::{logit_fit, ols, panel_ols, RegressionSpec, VcovSpec};

/// Table name used when a call does not name one.
pub const DEFAULT_TABLE: &str = "data";

#[derive(Deserialize)]
struct ParamFile {
    name: String,
    version: String,
    parameters: Vec<ParamSpec>,
}

macro_rules! descriptor {
    ($name:literal) => {
        descriptor(
            include_str!(concat!("../../tools/", $name, ".json")),
            include_str!(concat!("../../tools/", $name, ".md")),
        )
    };
}

fn descriptor(params: &str, prompt: &str) -> ToolDescriptor {
    let file: ParamFile = serde_json::from_str(params).expect("bundled descriptor parses");
    ToolDescriptor {
        name: file.name,
        version: file.version,
        internal_prompt: prompt.to_string(),
        summary: None,
        parameters: file.parameters,
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| EconError::InvalidArgument(e.to_string()))
}

fn table<'a>(ctx: &'a ToolContext, args: &ValidatedArgs) -> Result<&'a DataTable> {
    ctx.table(args.str("data").unwrap_or(DEFAULT_TABLE))
}

fn output_name(args: &ValidatedArgs) -> String {
    args.str("output").or(args.str("data")).unwrap_or(DEFAULT_TABLE).to_string()
}

/// Covariance from the `vcov`/`cluster` pair; `default_cluster` applies when
/// neither is given.
fn vcov(args: &ValidatedArgs, default_cluster: Option<&str>) -> Result<VcovSpec> {
    let cluster = args.str("cluster").or(default_cluster);
    match (args.str("vcov"), cluster) {
        (None, Some(c)) | (Some("cluster"), Some(c)) => Ok(VcovSpec::cluster(c)),
        (None, None) | (Some("classical"), _) => Ok(VcovSpec::classical()),
        (Some("robust"), _) => Ok(VcovSpec::robust()),
        (Some("cluster"), None) => Err(EconError::InvalidArgument(
            "vcov 'cluster' needs a 'cluster' column".into(),
        )),
        (Some(other), _) => Err(EconError::InvalidArgument(format!("unknown vcov '{other}'"))),
    }
}

fn count(args: &ValidatedArgs, name: &str) -> Result<usize> {
    match args.integer(name) {
        Some(v) if v >= 0 => Ok(v as usize),
        Some(v) => Err(EconError::InvalidArgument(format!("'{name}' must be nonnegative, got {v}"))),
        None => Err(EconError::InvalidArgument(format!("argument '{name}' is required"))),
    }
}

fn regression_spec(args: &ValidatedArgs, fixed_effects: Vec<String>) -> Result<RegressionSpec> {
    Ok(RegressionSpec {
        outcome: args.req_str("outcome")?.to_string(),
        regressors: args.strings("regressors"),
        include_intercept: args.boolean("include_intercept").unwrap_or(true),
        fixed_effect_factors: fixed_effects,
        vcov: vcov(args, None)?,
        weights: args.str("weights").map(str::to_string),
    })
}

fn ols_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let fit = ols(table(ctx, args)?, &regression_spec(args, Vec::new())?)?;
    Ok(ToolValue::json(to_json(&fit)?))
}

fn panel_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let spec = regression_spec(args, args.strings("fixed_effects"))?;
    Ok(ToolValue::json(to_json(&panel_ols(table(ctx, args)?, &spec)?)?))
}

fn logit_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let spec = regression_spec(args, Vec::new())?;
    let max_iter = count(args, "max_iter")?;
    let tol = args.number("tol").unwrap_or(1e-8);
    Ok(ToolValue::json(to_json(&logit_fit(table(ctx, args)?, &spec, max_iter, tol)?)?))
}

fn trim_rule(args: &ValidatedArgs) -> Option<TrimRule> {
    let lower = args.number("trim_lower").unwrap_or(0.1);
    let upper = args.number("trim_upper").unwrap_or(0.9);
    match args.str("trim_mode") {
        Some("quantile") => Some(TrimRule::quantile(lower, upper)),
        Some("threshold") => Some(TrimRule::threshold(lower, upper)),
        _ => None,
    }
}

fn ps_regression_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let spec = PsRegressionSpec {
        treatment: args.req_str("treatment")?.to_string(),
        outcome: args.req_str("outcome")?.to_string(),
        covariates: args.strings("covariates"),
        categorical: args.strings("categorical"),
        trim: trim_rule(args),
        include_covariates_second_stage: args
            .boolean("include_covariates_second_stage")
            .unwrap_or(false),
        vcov: vcov(args, None)?,
    };
    Ok(ToolValue::json(to_json(&ps_regression_adjustment(table(ctx, args)?, &spec)?)?))
}

fn ps_matching_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let options = MatchingOptions {
        estimand: if args.str("estimand") == Some("ATET") { Estimand::Atet } else { Estimand::Ate },
        ratio: count(args, "ratio")?,
        with_replacement: args.boolean("with_replacement").unwrap_or(true),
        bootstrap_reps: count(args, "bootstrap_reps")?,
        seed: count(args, "seed")? as u64,
    };
    let result = ps_matching(
        table(ctx, args)?,
        args.req_str("treatment")?,
        args.req_str("outcome")?,
        &args.strings("covariates"),
        &args.strings("categorical"),
        &options,
    )?;
    Ok(ToolValue::json(to_json(&result)?))
}

fn iv_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let spec = IvSpec {
        outcome: args.req_str("outcome")?.to_string(),
        endogenous: args.strings("endogenous"),
        instruments: args.strings("instruments"),
        exogenous: args.strings("exogenous"),
        include_intercept: true,
        vcov: vcov(args, None)?,
    };
    Ok(ToolValue::json(to_json(&iv_2sls(table(ctx, args)?, &spec)?)?))
}

fn did_static_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let unit = args.req_str("unit")?;
    let spec = DidSpec {
        outcome: args.req_str("outcome")?.to_string(),
        treatment: args.req_str("treatment")?.to_string(),
        unit: unit.to_string(),
        time: args.req_str("time")?.to_string(),
        controls: args.strings("controls"),
        vcov: Some(vcov(args, Some(unit))?),
    };
    Ok(ToolValue::json(to_json(&did_static(table(ctx, args)?, &spec)?)?))
}

fn event_study_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let unit = args.req_str("unit")?;
    let spec = EventStudySpec {
        outcome: args.req_str("outcome")?.to_string(),
        unit: unit.to_string(),
        time: args.req_str("time")?.to_string(),
        adoption_time: args.req_str("adoption_time")?.to_string(),
        see_back: count(args, "see_back")?,
        see_forward: count(args, "see_forward")?,
        controls: args.strings("controls"),
        vcov: Some(vcov(args, Some(unit))?),
        lag_indexing: if args.str("lag_indexing") == Some("one_based") {
            LagIndexing::OneBased
        } else {
            LagIndexing::ZeroBased
        },
    };
    Ok(ToolValue::json(to_json(&did_event_study(table(ctx, args)?, &spec)?)?))
}

fn rdd_spec(args: &ValidatedArgs) -> Result<RddSpec> {
    Ok(RddSpec {
        outcome: args.req_str("outcome")?.to_string(),
        running: args.req_str("running")?.to_string(),
        cutoff: args
            .number("cutoff")
            .ok_or_else(|| EconError::InvalidArgument("argument 'cutoff' is required".into()))?,
        bandwidth: args.number("bandwidth"),
        kernel: if args.str("kernel") == Some("uniform") { Kernel::Uniform } else { Kernel::Triangular },
        order: count(args, "order")?,
    })
}

fn rdd_sharp_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    Ok(ToolValue::json(to_json(&rdd_sharp(table(ctx, args)?, &rdd_spec(args)?)?)?))
}

fn rdd_fuzzy_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let result = rdd_fuzzy(table(ctx, args)?, &rdd_spec(args)?, args.req_str("treatment")?)?;
    Ok(ToolValue::json(to_json(&result)?))
}

fn table_info(name: &str, t: &DataTable) -> Value {
    let columns: Vec<Value> = t
        .columns()
        .iter()
        .map(|c| json!({"name": c.name, "kind": c.kind().to_string(), "missing": c.missing_count()}))
        .collect();
    json!({"table": name, "rows": t.row_count(), "columns": columns})
}

fn produced(name: String, t: DataTable, notes: Vec<String>) -> ToolValue {
    let mut info = table_info(&name, &t);
    if !notes.is_empty() {
        info["notes"] = json!(notes);
    }
    ToolValue { result: info, table: Some((name, t)) }
}

fn load_csv_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let raw = args.req_str("path")?;
    let path = if Path::new(raw).is_absolute() { Path::new(raw).to_path_buf() } else { ctx.data_dir.join(raw) };
    let delimiter = match args.str("delimiter").unwrap_or(",").as_bytes() {
        [b] => *b,
        _ => return Err(EconError::InvalidArgument("delimiter must be a single byte".into())),
    };
    let options = CsvOptions {
        delimiter,
        header_row: args.boolean("header").unwrap_or(true),
        ..CsvOptions::default()
    };
    let name = args.str("name").unwrap_or(DEFAULT_TABLE).to_string();
    let t = load_csv(&path, &options)?.with_name(name.clone());
    Ok(produced(name, t, Vec::new()))
}

fn describe_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    Ok(ToolValue::json(describe(table(ctx, args)?).to_json()))
}

fn one_hot_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let t = one_hot_encode(
        table(ctx, args)?,
        &args.strings("columns"),
        args.boolean("drop_first").unwrap_or(true),
    )?;
    Ok(produced(output_name(args), t, Vec::new()))
}

fn derive_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let transform = Transform::from_name(args.req_str("transform")?, args.number("threshold"))?;
    let (t, notes) = derive_column(
        table(ctx, args)?,
        args.req_str("new_column")?,
        transform,
        &args.strings("sources"),
    )?;
    Ok(produced(output_name(args), t, notes))
}

fn parse_cell(s: &str) -> CellValue {
    s.trim().parse::<f64>().map_or_else(|_| CellValue::Text(s.to_string()), CellValue::Number)
}

fn median_split_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let key_value = args.str("key_value").map(parse_cell);
    let (t, column) = median_split(
        table(ctx, args)?,
        args.req_str("value_column")?,
        args.str("entity_column"),
        args.str("key_column"),
        key_value.as_ref(),
    )?;
    Ok(produced(output_name(args), t, vec![format!("added column {column}")]))
}

fn filter_tool(ctx: &ToolContext, args: &ValidatedArgs) -> Result<ToolValue> {
    let t = table(ctx, args)?;
    let column = t.column(args.req_str("column")?)?;
    let op = args.req_str("op")?;
    let target = args.str("value").map(parse_cell);
    if op != "not_missing" && target.is_none() {
        return Err(EconError::InvalidArgument(format!("operator '{op}' needs a 'value'")));
    }
    let mask: Vec<bool> = (0..t.row_count())
        .map(|r| {
            let Some(cell) = column.cell(r) else { return false };
            let Some(target) = &target else { return true };
            let ordering = match (&cell, target) {
                (CellValue::Number(a), CellValue::Number(b)) => a.partial_cmp(b),
                (a, b) => Some(a.to_string().cmp(&b.to_string())),
            };
            match op {
                "eq" => cell.matches(target),
                "ne" => !cell.matches(target),
                "lt" => ordering.is_some_and(|o| o.is_lt()),
                "le" => ordering.is_some_and(|o| o.is_le()),
                "gt" => ordering.is_some_and(|o| o.is_gt()),
                "ge" => ordering.is_some_and(|o| o.is_ge()),
                _ => true,
            }
        })
        .collect();
    let kept = mask.iter().filter(|&&k| k).count();
    let out = t.filter_rows(&mask)?;
    let note = format!("kept {kept} of {} row(s)", t.row_count());
    Ok(produced(output_name(args), out, vec![note]))
}

/// The ten estimator tools.
pub fn estimator_tools() -> Vec<Tool> {
    vec![
        Tool::new(descriptor!("ols"), ols_tool),
        Tool::new(descriptor!("panel_ols"), panel_tool),
        Tool::new(descriptor!("logit_fit"), logit_tool),
        Tool::new(descriptor!("ps_regression_adjustment"), ps_regression_tool),
        Tool::new(descriptor!("ps_matching"), ps_matching_tool),
        Tool::new(descriptor!("iv_2sls"), iv_tool),
        Tool::new(descriptor!("did_static"), did_static_tool),
        Tool::new(descriptor!("did_event_study"), event_study_tool),
        Tool::new(descriptor!("rdd_sharp"), rdd_sharp_tool),
        Tool::new(descriptor!("rdd_fuzzy"), rdd_fuzzy_tool),
    ]
}

/// Loading, description and preprocessing tools.
pub fn data_tools() -> Vec<Tool> {
    vec![
        Tool::new(descriptor!("load_csv"), load_csv_tool),
        Tool::new(descriptor!("describe"), describe_tool),
        Tool::new(descriptor!("one_hot_encode"), one_hot_tool),
        Tool::new(descriptor!("derive_column"), derive_tool),
        Tool::new(descriptor!("median_split"), median_split_tool),
        Tool::new(descriptor!("filter_rows"), filter_tool),
    ]
}

pub fn builtin_tools() -> Vec<Tool> {
    let mut tools = estimator_tools();
    tools.extend(data_tools());
    tools
}
