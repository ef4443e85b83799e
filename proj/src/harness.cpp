#include "dipair/harness.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dipair/errors.hpp"
#include "dipair/metrics.hpp"

namespace dipair {

namespace fs = std::filesystem;
using nlohmann::json;

DiPairConfig desk_dipair_tsf(const GeneratorConfig& data) {
    DiPairConfig c;
    c.encoder_layers = 2;
    c.encoder_hidden = 128;
    c.encoder_heads = 2;
    c.encoder_intermediate = 512;
    c.vocab_size = data.vocab_size;
    c.left_max_length = data.max_left + 1;
    c.right_max_length = data.max_right + 1;
    c.share_encoder_params = true;
    c.left_truncate = 4;
    c.right_truncate = 8;
    c.projection_dim = 64;
    c.head_kind = HeadKind::Transformer;
    c.head_layers = 2;
    c.head_heads = 1;
    c.head_intermediate = 256;
    return c;
}

DiPairConfig desk_dipair_ffnn(const GeneratorConfig& data) {
    DiPairConfig c = desk_dipair_tsf(data);
    c.head_kind = HeadKind::Ffnn;
    c.ffnn_dims = {128, 128};
    return c;
}

DiPairConfig desk_de_ffnn(const GeneratorConfig& data) {
    DiPairConfig c = desk_dipair_tsf(data);
    c.head_kind = HeadKind::Ffnn;
    c.ffnn_dims = {128, 128};
    c.left_truncate = 1;
    c.right_truncate = 1;
    c.projection_dim = 0;  // raw CLS embeddings
    return c;
}

DiPairConfig desk_de_cos(const GeneratorConfig& data) {
    DiPairConfig c = desk_dipair_tsf(data);
    c.head_kind = HeadKind::Cosine;
    c.left_truncate = 1;
    c.right_truncate = 1;
    c.projection_dim = 0;
    return c;
}

ExperimentConfig default_experiment() {
    ExperimentConfig cfg;
    cfg.teacher = default_teacher_spec(cfg.dataset.vocab_size,
                                       cfg.dataset.max_left + cfg.dataset.max_right + 3);
    cfg.teacher.training.batch_size = 256;
    cfg.teacher.training.max_steps = 4000;
    cfg.stage1.frozen_prefixes = {"encoder."};
    cfg.stage1.batch_size = 256;
    cfg.stage2.batch_size = 256;
    cfg.students = {{"DiPairTSF", desk_dipair_tsf(cfg.dataset)},
                    {"DiPairFFNN", desk_dipair_ffnn(cfg.dataset)},
                    {"DE-FFNN", desk_de_ffnn(cfg.dataset)},
                    {"DE-Cos", desk_de_cos(cfg.dataset)}};
    return cfg;
}

// ---- config serde ----

namespace {

json stage_to_json(const StageSpec& s) {
    return json{{"frozen_prefixes", s.frozen_prefixes}, {"learning_rate", s.learning_rate},
                {"weight_decay", s.weight_decay},       {"batch_size", s.batch_size},
                {"max_steps", s.max_steps},             {"eval_every", s.eval_every},
                {"patience", s.patience},               {"warmup_steps", s.warmup_steps}};
}

StageSpec stage_from_json(const json& j, const StageSpec& base) {
    StageSpec s = base;
    s.frozen_prefixes = j.value("frozen_prefixes", s.frozen_prefixes);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.max_steps = j.value("max_steps", s.max_steps);
    s.eval_every = j.value("eval_every", s.eval_every);
    s.patience = j.value("patience", s.patience);
    s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
    return s;
}

}  // namespace

std::string to_json_string(const ExperimentConfig& cfg) {
    json students = json::array();
    for (const auto& s : cfg.students)
        students.push_back(
            {{"name", s.name}, {"config", json::parse(to_json_string(s.config))}});
    json j{{"name", cfg.name},
           {"seed", cfg.seed},
           {"dataset", json::parse(to_json_string(cfg.dataset))},
           {"teacher",
            {{"model", json::parse(to_json_string(cfg.teacher.model))},
             {"training", stage_to_json(cfg.teacher.training)},
             {"gate_auc", cfg.teacher.gate_auc}}},
           {"temperature", cfg.temperature},
           {"students", students},
           {"stage1", stage_to_json(cfg.stage1)},
           {"stage2", stage_to_json(cfg.stage2)},
           {"eval_batch", cfg.eval_batch},
           {"measure_latency", cfg.measure_latency},
           {"latency_repetitions", cfg.latency_repetitions},
           {"latency_pairs", cfg.latency_pairs}};
    return j.dump(2);
}

ExperimentConfig experiment_from_json(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig cfg = default_experiment();
    cfg.name = j.value("name", cfg.name);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("dataset")) cfg.dataset = generator_config_from_json(j.at("dataset").dump());
    // Teacher defaults track the dataset unless given explicitly.
    cfg.teacher = default_teacher_spec(cfg.dataset.vocab_size,
                                       cfg.dataset.max_left + cfg.dataset.max_right + 3);
    cfg.teacher.training.batch_size = 256;
    cfg.teacher.training.max_steps = 4000;
    if (j.contains("teacher")) {
        const json& t = j.at("teacher");
        if (t.contains("model"))
            cfg.teacher.model = transformer_config_from_json(t.at("model").dump());
        if (t.contains("training"))
            cfg.teacher.training = stage_from_json(t.at("training"), cfg.teacher.training);
        cfg.teacher.gate_auc = t.value("gate_auc", cfg.teacher.gate_auc);
    }
    cfg.temperature = j.value("temperature", cfg.temperature);
    if (j.contains("stage1")) cfg.stage1 = stage_from_json(j.at("stage1"), cfg.stage1);
    if (j.contains("stage2")) cfg.stage2 = stage_from_json(j.at("stage2"), cfg.stage2);
    if (j.contains("students")) {
        cfg.students.clear();
        for (const auto& s : j.at("students"))
            cfg.students.push_back(
                {s.at("name"), dipair_config_from_json(s.at("config").dump())});
    } else {
        // Re-derive the default matrix against the configured dataset.
        cfg.students = {{"DiPairTSF", desk_dipair_tsf(cfg.dataset)},
                        {"DiPairFFNN", desk_dipair_ffnn(cfg.dataset)},
                        {"DE-FFNN", desk_de_ffnn(cfg.dataset)},
                        {"DE-Cos", desk_de_cos(cfg.dataset)}};
    }
    cfg.eval_batch = j.value("eval_batch", cfg.eval_batch);
    cfg.measure_latency = j.value("measure_latency", cfg.measure_latency);
    cfg.latency_repetitions = j.value("latency_repetitions", cfg.latency_repetitions);
    cfg.latency_pairs = j.value("latency_pairs", cfg.latency_pairs);
    return cfg;
}

ExperimentConfig experiment_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return experiment_from_json(ss.str());
}

std::uint64_t student_seed(std::uint64_t experiment_seed, std::size_t index) {
    return experiment_seed * 6364136223846793005ull + 1442695040888963407ull + index;
}

// ---- experiment preparation ----

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string teacher_cache_path(const ExperimentConfig& cfg, const std::string& out_dir) {
    std::ostringstream key;
    key << to_json_string(cfg.teacher.model) << "|" << stage_to_json(cfg.teacher.training).dump()
        << "|" << to_json_string(cfg.dataset) << "|" << cfg.seed;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a(key.str()));
    return out_dir + "/teacher_" + buf + ".ckpt";
}

}  // namespace

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    PreparedExperiment prep;
    prep.data = generate(cfg.seed, cfg.dataset);

    const std::string cache = teacher_cache_path(cfg, out_dir);
    if (fs::exists(cache)) {
        prep.teacher = Teacher{load_cross_attention_model(cache), -1.0, cfg.teacher.gate_auc};
        prep.teacher.validation_auc =
            evaluate_auc(prep.teacher.model, prep.data.valid, cfg.eval_batch);
        std::cerr << "harness: reusing cached teacher " << cache << "\n";
    } else {
        prep.teacher = train_teacher(cfg.teacher, prep.data.train, prep.data.valid, cfg.seed);
        save_cross_attention_model(prep.teacher.model, cache);
    }
    if (!prep.teacher.gate_passed())
        throw ContractError("teacher failed its gate: validation AUC " +
                            std::to_string(prep.teacher.validation_auc));

    annotate(prep.teacher, prep.data.distill, cfg.temperature, cfg.eval_batch);
    prep.teacher_auc_valid = prep.teacher.validation_auc;
    prep.teacher_auc_test = evaluate_auc(prep.teacher.model, prep.data.test, cfg.eval_batch);
    prep.teacher_pearson_valid =
        evaluate_pearson(prep.teacher.model, prep.data.valid, cfg.eval_batch);
    prep.teacher_pearson_test =
        evaluate_pearson(prep.teacher.model, prep.data.test, cfg.eval_batch);
    return prep;
}

StudentRun train_student(DiPairModel& model, const PreparedExperiment& prep,
                         const ExperimentConfig& cfg, std::uint64_t seed, bool two_stage) {
    StudentRun run;
    if (two_stage) {
        StageSpec s1 = cfg.stage1;
        if (s1.frozen_prefixes.empty()) s1.frozen_prefixes = {"encoder."};
        run.report = train_two_stage(model, prep.data.distill, LabelSource::Soft, prep.data.valid,
                                     s1, cfg.stage2, seed);
    } else {
        StageSpec spec = cfg.stage2;
        spec.frozen_prefixes.clear();
        run.report =
            train_one_stage(model, prep.data.distill, LabelSource::Soft, prep.data.valid, spec,
                            seed);
    }
    run.auc_valid = evaluate_auc(model, prep.data.valid, cfg.eval_batch);
    run.auc_test = evaluate_auc(model, prep.data.test, cfg.eval_batch);
    run.pearson_valid = evaluate_pearson(model, prep.data.valid, cfg.eval_batch);
    run.pearson_test = evaluate_pearson(model, prep.data.test, cfg.eval_batch);
    return run;
}

// ---- CSV emission ----

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << "model,head_kind,K,N,M,D,L,head_params,auc_valid,auc_test,pearson_valid,"
          "pearson_test,delta_auc_test_pct,flop_speedup,latency_speedup\n";
    for (const auto& r : rows) {
        os << r.model << "," << r.head_kind << "," << r.encoder_layers << "," << r.n << ","
           << r.m << "," << r.d << "," << r.l << "," << r.head_params << "," << fmt(r.auc_valid)
           << "," << fmt(r.auc_test) << "," << fmt(r.pearson_valid) << ","
           << fmt(r.pearson_test) << "," << fmt(r.delta_auc_test_pct) << ","
           << fmt(r.flop_speedup) << ","
           << (r.latency_speedup > 0 ? fmt(r.latency_speedup) : "") << "\n";
    }
}

void write_tradeoff_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << "model,flop_speedup,auc_test,pearson_test\n";
    for (const auto& r : rows)
        os << r.model << "," << fmt(r.flop_speedup) << "," << fmt(r.auc_test) << ","
           << fmt(r.pearson_test) << "\n";
}

FlopInputs flop_inputs_for(const ExperimentConfig& cfg, const DiPairConfig& student) {
    FlopInputs in;
    in.teacher_layers = cfg.teacher.model.num_layers;
    in.teacher_seq_len = cfg.teacher.model.max_sequence_length;
    in.teacher_hidden = cfg.teacher.model.hidden_size;
    in.teacher_intermediate = cfg.teacher.model.intermediate_size;
    in.student = student;
    return in;
}

}  // namespace

MatrixResult run_matrix(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    PreparedExperiment prep = prepare_experiment(cfg, out_dir);

    MatrixResult result;
    result.metrics_csv = out_dir + "/metrics.csv";
    result.tradeoff_csv = out_dir + "/tradeoff.csv";

    MetricRow teacher_row;
    teacher_row.model = "teacher";
    teacher_row.head_kind = "cross_attention";
    teacher_row.encoder_layers = cfg.teacher.model.num_layers;
    teacher_row.auc_valid = prep.teacher_auc_valid;
    teacher_row.auc_test = prep.teacher_auc_test;
    teacher_row.pearson_valid = prep.teacher_pearson_valid;
    teacher_row.pearson_test = prep.teacher_pearson_test;
    teacher_row.delta_auc_test_pct = 0.0;
    teacher_row.flop_speedup = 1.0;
    result.rows.push_back(teacher_row);

    for (std::size_t i = 0; i < cfg.students.size(); ++i) {
        const auto& spec = cfg.students[i];
        try {
            DiPairModel model(spec.config, student_seed(cfg.seed, i));
            StudentRun run = train_student(model, prep, cfg, student_seed(cfg.seed, i), true);

            const std::string sdir = out_dir + "/students/" + spec.name;
            fs::create_directories(sdir);
            save_dipair_model(model, sdir + "/model.ckpt");
            std::ofstream(sdir + "/report.json") << to_json_string(run.report);

            MetricRow row;
            row.model = spec.name;
            row.head_kind = to_string(spec.config.head_kind);
            row.encoder_layers = spec.config.encoder_layers;
            row.n = spec.config.left_truncate;
            row.m = spec.config.right_truncate;
            row.d = spec.config.projection_dim;
            row.l = spec.config.head_kind == HeadKind::Transformer ? spec.config.head_layers
                    : spec.config.head_kind == HeadKind::Ffnn
                        ? static_cast<int>(spec.config.ffnn_dims.size())
                        : 0;
            row.head_params = model.head_param_count();
            row.auc_valid = run.auc_valid;
            row.auc_test = run.auc_test;
            row.pearson_valid = run.pearson_valid;
            row.pearson_test = run.pearson_test;
            row.delta_auc_test_pct =
                (run.auc_test - prep.teacher_auc_test) / prep.teacher_auc_test * 100.0;
            row.flop_speedup = flop_estimate(flop_inputs_for(cfg, spec.config)).speedup;
            if (cfg.measure_latency) {
                std::vector<PairExample> workload(
                    prep.data.test.begin(),
                    prep.data.test.begin() +
                        std::min<std::size_t>(prep.data.test.size(), cfg.latency_pairs));
                LatencyReport lat = benchmark_latency(prep.teacher.model, model, workload,
                                                      cfg.latency_repetitions, out_dir);
                row.latency_speedup = lat.measured_speedup;
                std::ofstream(sdir + "/latency.json") << lat.to_json_string();
            }
            result.rows.push_back(row);
        } catch (const std::exception& e) {
            // Persist what we have, then surface the failing model.
            write_metrics_csv(result.metrics_csv, result.rows);
            write_tradeoff_csv(result.tradeoff_csv, result.rows);
            throw ContractError("student '" + spec.name + "' failed: " + e.what());
        }
    }

    write_metrics_csv(result.metrics_csv, result.rows);
    write_tradeoff_csv(result.tradeoff_csv, result.rows);
    return result;
}

// ---- ablations ----

std::vector<std::string> ablation_kinds() {
    return {"encoder_layers", "input_length",  "projection_dim", "first_vs_last",
            "nm_sweep",       "head_capacity", "one_vs_two_stage"};
}

namespace {

struct AblationRow {
    std::string setting;
    std::string model;
    double auc_test = 0;
    double pearson_test = 0;
    std::int64_t head_params = 0;
    double flop_speedup = 0;
};

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << "setting,model,auc_test,pearson_test,head_params,flop_speedup\n";
    for (const auto& r : rows)
        os << r.setting << "," << r.model << "," << fmt(r.auc_test) << ","
           << fmt(r.pearson_test) << "," << r.head_params << "," << fmt(r.flop_speedup) << "\n";
}

AblationRow run_variant(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                        const std::string& setting, const std::string& name,
                        const DiPairConfig& student, bool two_stage, std::size_t index) {
    DiPairModel model(student, student_seed(cfg.seed, index));
    StudentRun run = train_student(model, prep, cfg, student_seed(cfg.seed, index), two_stage);
    AblationRow row;
    row.setting = setting;
    row.model = name;
    row.auc_test = run.auc_test;
    row.pearson_test = run.pearson_test;
    row.head_params = model.head_param_count();
    row.flop_speedup = flop_estimate([&] {
                           FlopInputs in;
                           in.teacher_layers = cfg.teacher.model.num_layers;
                           in.teacher_seq_len = cfg.teacher.model.max_sequence_length;
                           in.teacher_hidden = cfg.teacher.model.hidden_size;
                           in.teacher_intermediate = cfg.teacher.model.intermediate_size;
                           in.student = student;
                           return in;
                       }())
                           .speedup;
    return row;
}

}  // namespace

std::string run_ablation(const std::string& kind, const ExperimentConfig& cfg,
                         const std::string& out_dir) {
    const auto kinds = ablation_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        std::string msg = "unknown ablation kind '" + kind + "'; expected one of:";
        for (const auto& k : kinds) msg += " " + k;
        throw ConfigError(msg);
    }
    fs::create_directories(out_dir);
    PreparedExperiment prep = prepare_experiment(cfg, out_dir);
    const DiPairConfig base = desk_dipair_tsf(cfg.dataset);
    std::vector<AblationRow> rows;
    std::size_t idx = 100;  // seed stream distinct from the matrix students

    if (kind == "encoder_layers") {
        for (int k : {0, 1, 2, 4}) {
            DiPairConfig c = base;
            c.encoder_layers = k;
            rows.push_back(run_variant(cfg, prep, "K=" + std::to_string(k), "DiPairTSF", c, true,
                                       idx++));
        }
    } else if (kind == "input_length") {
        // Cross-attention student with the input budget cut down.
        for (int len : {16, 32, 64, cfg.teacher.model.max_sequence_length}) {
            TransformerConfig tc = cfg.teacher.model;
            tc.num_layers = 2;
            tc.max_sequence_length = len;
            CrossAttentionModel model(tc, student_seed(cfg.seed, idx));
            StageSpec spec = cfg.stage2;
            spec.frozen_prefixes.clear();
            train_cross_attention(model, prep.data.distill, LabelSource::Soft, prep.data.valid,
                                  spec, student_seed(cfg.seed, idx));
            AblationRow row;
            row.setting = "len=" + std::to_string(len);
            row.model = "cross_attention";
            row.auc_test = evaluate_auc(model, prep.data.test, cfg.eval_batch);
            row.pearson_test = evaluate_pearson(model, prep.data.test, cfg.eval_batch);
            rows.push_back(row);
            ++idx;
        }
    } else if (kind == "projection_dim") {
        for (int d : {0, 64, 8}) {
            DiPairConfig c = base;
            c.projection_dim = d;
            c.head_heads = 1;
            rows.push_back(run_variant(cfg, prep,
                                       d == 0 ? "D=none" : "D=" + std::to_string(d), "DiPairTSF",
                                       c, true, idx++));
        }
    } else if (kind == "first_vs_last") {
        for (auto side : {TruncationSide::First, TruncationSide::Last}) {
            DiPairConfig c = base;
            c.truncation_side = side;
            rows.push_back(run_variant(cfg, prep,
                                       side == TruncationSide::First ? "first" : "last",
                                       "DiPairTSF", c, true, idx++));
        }
    } else if (kind == "nm_sweep") {
        for (auto [n, m] : {std::pair{2, 2}, {4, 8}, {8, 16}}) {
            DiPairConfig c = base;
            c.left_truncate = n;
            c.right_truncate = m;
            rows.push_back(run_variant(cfg, prep,
                                       "N=" + std::to_string(n) + ",M=" + std::to_string(m),
                                       "DiPairTSF", c, true, idx++));
        }
    } else if (kind == "head_capacity") {
        for (auto [n, m] : {std::pair{4, 8}, {8, 16}}) {
            DiPairConfig c = base;
            c.left_truncate = n;
            c.right_truncate = m;
            rows.push_back(run_variant(cfg, prep,
                                       "N=" + std::to_string(n) + ",M=" + std::to_string(m),
                                       "DiPairTSF", c, true, idx++));
        }
        for (int width : {128, 512}) {
            DiPairConfig c = desk_dipair_ffnn(cfg.dataset);
            c.ffnn_dims = {width, width};
            rows.push_back(run_variant(cfg, prep, "x" + std::to_string(width) + "x" +
                                                      std::to_string(width),
                                       "DiPairFFNN", c, true, idx++));
            DiPairConfig d = desk_de_ffnn(cfg.dataset);
            d.ffnn_dims = {width, width};
            rows.push_back(run_variant(cfg, prep, "x" + std::to_string(width) + "x" +
                                                      std::to_string(width),
                                       "DE-FFNN", d, true, idx++));
        }
    } else if (kind == "one_vs_two_stage") {
        rows.push_back(run_variant(cfg, prep, "two_stage", "DiPairTSF", base, true, idx++));
        rows.push_back(run_variant(cfg, prep, "one_stage", "DiPairTSF", base, false, idx++));
    }

    const std::string path = out_dir + "/ablation_" + kind + ".csv";
    write_ablation_csv(path, rows);
    return path;
}

}  // namespace dipair
