#include "cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "perflaw/apen.hpp"
#include "perflaw/dataset.hpp"
#include "perflaw/error.hpp"
#include "perflaw/fitting.hpp"
#include "perflaw/laws.hpp"
#include "perflaw/optimize.hpp"
#include "perflaw/runstore.hpp"
#include "text_util.hpp"

#ifndef PERFLAW_VERSION
#define PERFLAW_VERSION "0.0.0"
#endif

namespace perflaw::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Context {
    std::string output = "text";
    unsigned threads = 1;
    std::ostream* out = nullptr;

    bool json() const { return output == "json"; }
};

// ---------------------------------------------------------------------------
// Output

std::string scalar_text(const ojson& v) {
    if (v.is_null()) return "-";
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) return detail::format_double(v.get<double>());
    if (v.is_number()) return v.dump();
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

void render_text(const ojson& obj, std::ostream& out, const std::string& prefix = "") {
    for (const auto& [key, v] : obj.items()) {
        const std::string name = prefix + key;
        if (v.is_object()) {
            render_text(v, out, name + ".");
        } else if (v.is_array() && !v.empty() && v.front().is_object()) {
            out << name << ":\n";
            for (const auto& row : v) {
                out << " ";
                for (const auto& [k, x] : row.items()) out << ' ' << k << '=' << scalar_text(x);
                out << '\n';
            }
        } else if (v.is_array()) {
            out << name << ':';
            for (const auto& x : v) out << ' ' << scalar_text(x);
            out << '\n';
        } else {
            out << name << ": " << scalar_text(v) << '\n';
        }
    }
}

void emit(const Context& ctx, const ojson& obj) {
    if (ctx.json()) {
        *ctx.out << obj.dump(2) << '\n';
    } else {
        render_text(obj, *ctx.out);
    }
}

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

// ---------------------------------------------------------------------------
// Argument helpers

ParamMap parse_assignments(const std::vector<std::string>& items, std::string_view what) {
    ParamMap map;
    for (const auto& item : items) {
        auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ValidationError(std::string(what) + " entries look like name=value, got '" + item + "'");
        }
        const std::string name = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        double value = 0.0;
        std::size_t used = 0;
        try {
            value = std::stod(text, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != text.size() || text.empty()) {
            throw ValidationError(std::string(what) + " value for '" + name + "' is not a number: '" + text + "'");
        }
        if (!map.emplace(name, value).second) throw ValidationError(std::string(what) + " repeats '" + name + "'");
    }
    return map;
}

BoundsOverrides parse_bounds(const std::vector<std::string>& items) {
    BoundsOverrides out;
    for (const auto& item : items) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError("bounds look like name=lo:hi, got '" + item + "'");
        const auto range = detail::split(std::string_view(item).substr(eq + 1), ':');
        if (range.size() != 2) throw ValidationError("bounds look like name=lo:hi, got '" + item + "'");
        try {
            out[item.substr(0, eq)] = {std::stod(std::string(range[0])), std::stod(std::string(range[1]))};
        } catch (const std::exception&) {
            throw ValidationError("bounds for '" + item.substr(0, eq) + "' are not numbers");
        }
    }
    return out;
}

std::map<std::string, double> apply_mask(std::map<std::string, double> frozen, const std::vector<std::string>& masks,
                                         const std::vector<std::string>& freed) {
    for (const auto& name : freed) frozen.erase(name);
    for (const auto& [name, value] : parse_assignments(masks, "--mask")) {
        if (std::find(freed.begin(), freed.end(), name) != freed.end()) {
            throw ValidationError("'" + name + "' is both masked and freed");
        }
        frozen[name] = value;
    }
    return frozen;
}

double read_apen_report(const std::string& path) {
    ojson obj;
    try {
        obj = ojson::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path + ": not a JSON report: " + e.what());
    }
    auto it = obj.find("d_prime");
    if (it == obj.end() || !it->is_number()) throw ValidationError(path + ": report has no numeric d_prime");
    return it->get<double>();
}

MarkovChain chain_from_list(const std::vector<double>& p, std::optional<std::size_t> states) {
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p.size()))));
    if (k * k != p.size() || k == 0) {
        throw ValidationError("transition list has " + std::to_string(p.size()) + " entries, not a square matrix");
    }
    if (states && *states != k) {
        throw ValidationError("--states " + std::to_string(*states) + " does not match a " + std::to_string(k) + "x" +
                              std::to_string(k) + " transition list");
    }
    return MarkovChain(k, p);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// ---------------------------------------------------------------------------
// Sequence input shared by stats, apen and verify-bound

struct SeqInput {
    std::string path;
    std::string format;
    std::optional<std::size_t> truncate;
};

void add_seq_input(CLI::App* sub, SeqInput& in) {
    sub->add_option("file", in.path, "Interaction sequence file")->required();
    sub->add_option("--format", in.format, "csv or jsonl (default: from the file extension)");
    sub->add_option("--truncate", in.truncate, "Keep only the last S interactions of each user");
}

std::vector<InteractionSequence> load_input(const SeqInput& in) {
    SequenceFormat fmt = in.format.empty() ? format_from_extension(in.path).value_or(SequenceFormat::csv)
                                           : parse_sequence_format(in.format);
    auto seqs = load_sequences(in.path, fmt);
    if (in.truncate) seqs = truncate(seqs, *in.truncate);
    return seqs;
}

struct ApEnArgs {
    int m = 1;
    std::string pooling = "pooled";
    double epsilon = kDefaultApEnEpsilon;
};

void add_apen_args(CLI::App* sub, ApEnArgs& a) {
    sub->add_option("--m", a.m, "Window length")->capture_default_str();
    sub->add_option("--pooling", a.pooling, "pooled or per_sequence_weighted")->capture_default_str();
    sub->add_option("--epsilon", a.epsilon, "ApEn values at or below this are degenerate")->capture_default_str();
}

ApEnConfig apen_config(const ApEnArgs& a) { return ApEnConfig{a.m, 0.0, parse_pooling(a.pooling)}; }

// ---------------------------------------------------------------------------
// stats

void cmd_stats(const Context& ctx, const SeqInput& in) {
    auto seqs = load_input(in);
    auto s = compute_stats(seqs);
    ojson obj;
    obj["num_users"] = s.num_users;
    obj["s_max"] = s.s_max;
    obj["s_mean"] = s.s_mean;
    obj["tokens"] = s.tokens;
    obj["vocab"] = s.vocab;
    obj["sequence_entropy"] = sequence_distribution_entropy(seqs);
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// apen

struct ApEnCmd {
    SeqInput in;
    ApEnArgs apen;
    std::vector<double> reference;
};

void cmd_apen(const Context& ctx, const ApEnCmd& a) {
    auto seqs = load_input(a.in);
    const auto cfg = apen_config(a.apen);
    const auto result = compute_apen(seqs, cfg);
    const auto stats = compute_stats(seqs);
    // Both throw the degenerate error before anything is printed.
    const double prime = apen_prime(result.apen, a.apen.epsilon);
    const double d_prime = data_parameter(stats.tokens, result.apen, a.apen.epsilon);

    ojson obj;
    obj["apen"] = result.apen;
    obj["apen_prime"] = prime;
    obj["d_prime"] = d_prime;
    obj["m"] = cfg.m;
    obj["pooling"] = std::string(to_string(cfg.pooling));
    obj["tokens"] = stats.tokens;
    obj["windows_m"] = result.windows_m;
    obj["windows_m1"] = result.windows_m1;
    if (!a.reference.empty()) {
        const double expected = markov_apen(chain_from_list(a.reference, std::nullopt));
        obj["reference_apen"] = expected;
        obj["relative_error"] = std::abs(result.apen - expected) / expected;
    }
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// verify-bound

struct BoundCmd {
    SeqInput in;
    ApEnArgs apen;
};

void cmd_verify_bound(const Context& ctx, const BoundCmd& a) {
    auto seqs = load_input(a.in);
    auto r = verify_encoding_bound(seqs, apen_config(a.apen), a.apen.epsilon);
    ojson obj;
    obj["lhs"] = r.lhs;
    obj["rhs"] = optional_number(r.rhs);
    obj["holds"] = r.holds ? ojson(*r.holds) : ojson(nullptr);
    obj["degenerate"] = r.degenerate;
    obj["users_exceed_s_max"] = r.users_exceed_s_max;
    obj["apen"] = r.apen;
    obj["sequence_entropy"] = r.sequence_entropy;
    obj["num_users"] = r.num_users;
    obj["tokens"] = r.tokens;
    obj["s_max"] = r.s_max;
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// synth markov

struct SynthMarkovCmd {
    std::optional<std::size_t> states;
    std::vector<double> p;
    bool uniform = false;
    std::size_t length = 100'000;
    std::uint64_t seed = 0;
    std::size_t users = 1;
    std::string out;
    std::string format;
};

void cmd_synth_markov(const Context& ctx, const SynthMarkovCmd& a) {
    if (a.users == 0) throw ValidationError("--users must be positive");
    if (a.length == 0) throw ValidationError("--len must be positive");
    MarkovChain chain = [&] {
        if (a.uniform) {
            if (!a.states) throw ValidationError("--uniform needs --states");
            return MarkovChain::uniform(*a.states);
        }
        if (a.p.empty()) throw ValidationError("give the transition matrix with --p or use --uniform");
        return chain_from_list(a.p, a.states);
    }();
    const double analytic = markov_apen(chain);
    const auto pi = stationary_distribution(chain);

    std::vector<InteractionSequence> seqs;
    seqs.reserve(a.users);
    for (std::size_t u = 0; u < a.users; ++u) {
        // Golden-ratio stride keeps per-user streams distinct; user 0 uses the seed itself.
        const std::uint64_t seed = a.seed + 0x9E3779B97F4A7C15ULL * u;
        seqs.push_back(generate_markov(chain, a.length, seed, "u" + std::to_string(u + 1)));
    }
    const SequenceFormat fmt = a.format.empty() ? format_from_extension(a.out).value_or(SequenceFormat::csv)
                                                : parse_sequence_format(a.format);
    write_sequences(a.out, seqs, fmt);

    ojson obj;
    obj["path"] = a.out;
    obj["states"] = chain.states();
    obj["users"] = a.users;
    obj["tokens"] = a.users * a.length;
    obj["seed"] = a.seed;
    obj["analytic_apen"] = analytic;
    obj["stationary"] = pi;
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// synth runs

struct SynthRunsCmd {
    std::string law = "perf";
    std::string form = "simplified";
    std::string size = "layers";
    std::vector<std::string> params;
    std::vector<int> n_list = {1, 2, 4, 8, 16, 32};
    std::vector<int> d_list = {8, 16, 32, 64, 128, 256, 512};
    std::vector<double> d_primes;
    std::vector<std::string> apen_reports;
    std::vector<std::string> datasets;
    std::string metric;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    bool omit_d_prime = false;
    std::string out;
};

void cmd_synth_runs(const Context& ctx, const SynthRunsCmd& a) {
    if (!(a.sigma >= 0.0) || !std::isfinite(a.sigma)) throw ValidationError("--sigma must be >= 0");
    const bool perf = a.law == "perf";
    if (!perf && a.law != "loss") throw ValidationError("--law must be perf or loss");

    std::vector<double> scales = a.d_primes;
    for (const auto& report : a.apen_reports) scales.push_back(read_apen_report(report));
    if (scales.empty()) throw ValidationError("give at least one data scale with --d-prime or --apen-report");
    if (!a.datasets.empty() && a.datasets.size() != scales.size()) {
        throw ValidationError(std::to_string(a.datasets.size()) + " dataset ids for " + std::to_string(scales.size()) +
                              " data scales");
    }

    const ParamMap values = parse_assignments(a.params, "--params");
    std::optional<PerfLawParams> perf_law;
    std::optional<LossLawParams> loss_law;
    if (perf) {
        PerfLawParams defaults;
        defaults.w6 = 1.0;
        perf_law = perf_params_from_map(values, defaults);
        validate(*perf_law);
    } else {
        loss_law = loss_params_from_map(parse_loss_form(a.form), values);
        validate(*loss_law);
    }
    const MetricKind metric = parse_metric(a.metric.empty() ? (perf ? "hr@10" : "loss") : a.metric);
    if (metric.is_ranking() != perf) throw ValidationError("metric " + to_string(metric) + " does not fit --law " + a.law);
    const SizeCovariate size = parse_size_covariate(a.size);

    std::mt19937_64 rng(a.seed);
    std::normal_distribution<double> noise(0.0, a.sigma > 0.0 ? a.sigma : 1.0);
    std::vector<RunRecord> runs;
    for (std::size_t j = 0; j < scales.size(); ++j) {
        for (int n : a.n_list) {
            for (int d : a.d_list) {
                RunRecord run;
                run.dataset_id = a.datasets.empty() ? "ds" + std::to_string(j) : a.datasets[j];
                run.n_layers = n;
                run.d_emb = d;
                run.metric = metric;
                double clean = perf ? eval_perf_law(*perf_law, n, d, scales[j])
                                    : eval_loss_law(*loss_law, size_value(run, size), scales[j]);
                run.value = clean + (a.sigma > 0.0 ? noise(rng) : 0.0);
                if (perf) run.value = std::clamp(run.value, 0.0, 1.0);
                if (!a.omit_d_prime) run.d_prime = scales[j];
                runs.push_back(std::move(run));
            }
        }
    }
    write_run_file(a.out, runs);

    ojson obj;
    obj["path"] = a.out;
    obj["records"] = runs.size();
    obj["law"] = a.law;
    obj["metric"] = to_string(metric);
    obj["sigma"] = a.sigma;
    obj["seed"] = a.seed;
    obj["d_prime"] = scales;
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// fit loss | perf

struct FitCmd {
    bool perf = true;
    std::string runs;
    std::string archive;
    std::string name;
    std::string dataset;
    std::string metric;
    std::string data_scale = "supplied";
    std::string form = "simplified";
    std::string size = "layers";
    std::vector<std::string> masks;
    std::vector<std::string> freed;
    std::vector<std::string> bounds;
    std::vector<std::string> init;
    std::size_t starts = 64;
    std::uint64_t seed = 0;
};

std::vector<RunRecord> select_runs(std::vector<RunRecord> runs, const FitCmd& a) {
    if (!a.dataset.empty()) std::erase_if(runs, [&](const RunRecord& r) { return r.dataset_id != a.dataset; });
    if (!a.metric.empty()) {
        const MetricKind m = parse_metric(a.metric);
        std::erase_if(runs, [&](const RunRecord& r) {
            return r.metric.kind != m.kind || (m.k && r.metric.k != m.k);
        });
    } else {
        std::erase_if(runs, [&](const RunRecord& r) { return r.metric.is_ranking() != a.perf; });
        std::set<std::string> kinds;
        for (const auto& r : runs) kinds.insert(to_string(r.metric));
        if (kinds.size() > 1) {
            std::string list;
            for (const auto& k : kinds) list += (list.empty() ? "" : ", ") + k;
            throw ValidationError("runs carry several metrics (" + list + "); choose one with --metric");
        }
    }
    if (runs.empty()) throw ValidationError("no runs match the selection");
    return runs;
}

void cmd_fit(const Context& ctx, const FitCmd& a) {
    if (a.archive.empty()) throw ValidationError("--archive is required");
    RunArchive archive = RunArchive::open(a.archive, true);
    auto runs = select_runs(a.runs.empty() ? archive.load_runs() : load_run_file(a.runs), a);

    MultiStartOptions ms;
    ms.starts = a.starts;
    ms.seed = a.seed;
    ms.threads = ctx.threads;
    const ParamMap init = parse_assignments(a.init, "--init");

    FitResult fit;
    if (a.perf) {
        PerfFitOptions opt;
        opt.data_scale = parse_data_scale(a.data_scale);
        opt.frozen = apply_mask(opt.frozen, a.masks, a.freed);
        opt.bounds = parse_bounds(a.bounds);
        if (!init.empty()) opt.init = perf_params_from_map(init, default_perf_init());
        opt.multistart = ms;
        fit = fit_perf_law(runs, opt);
    } else {
        LossFitOptions opt;
        opt.form = parse_loss_form(a.form);
        opt.size = parse_size_covariate(a.size);
        opt.data_scale = parse_data_scale(a.data_scale);
        opt.frozen = apply_mask(opt.frozen, a.masks, a.freed);
        opt.bounds = parse_bounds(a.bounds);
        if (!init.empty()) opt.init = loss_params_from_map(opt.form, init);
        opt.multistart = ms;
        fit = fit_loss_law(runs, opt);
    }

    const std::string name = a.name.empty() ? (a.perf ? "perf" : "loss") : a.name;
    archive.save_fit(name, fit);
    const fs::path fit_file = fs::path(a.archive) / "fits" / (name + ".json");
    const fs::path points_file = fs::path(a.archive) / "fits" / (name + ".points.csv");

    std::string csv = "dataset_id,n_layers,d_emb,d_prime,observed,predicted,residual\n";
    for (const auto& r : runs) {
        const double pred = predict(fit, r);
        std::optional<double> scale = r.d_prime;
        if (auto it = fit.data_parameters.find(r.dataset_id); it != fit.data_parameters.end()) scale = it->second;
        csv += csv_field(r.dataset_id) + ',' + std::to_string(r.n_layers) + ',' + std::to_string(r.d_emb) + ',' +
               (scale ? detail::format_double(*scale) : "") + ',' + detail::format_double(r.value) + ',' +
               detail::format_double(pred) + ',' + detail::format_double(r.value - pred) + '\n';
    }
    detail::write_file(points_file, csv);

    ojson obj;
    obj["name"] = name;
    obj["fit_file"] = fit_file.generic_string();
    obj["points_file"] = points_file.generic_string();
    obj["fit"] = ojson::parse(fit_to_json(fit));
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// optimize

struct OptimizeCmd {
    std::string archive;
    std::string fit;
    std::string fit_file;
    std::optional<double> d_prime;
    std::string apen_report;
    std::string dataset;
    std::string n_range = "1:64";
    std::string d_range = "1:1024";
    std::string budget;
    std::string mode = "auto";
};

FitResult load_named_fit(const std::string& archive, const std::string& name, const std::string& file) {
    if (!file.empty()) {
        if (!name.empty()) throw ValidationError("use either --fit or --fit-file");
        try {
            return fit_from_json(detail::read_file(file));
        } catch (const ValidationError& e) {
            throw ValidationError(file + ": " + e.what());
        }
    }
    if (name.empty()) throw ValidationError("name a fit with --fit (and --archive) or --fit-file");
    if (archive.empty()) throw ValidationError("--fit needs --archive");
    return RunArchive::open(archive, false).load_fit(name);
}

void cmd_optimize(const Context& ctx, const OptimizeCmd& a) {
    const FitResult fit = load_named_fit(a.archive, a.fit, a.fit_file);
    if (!fit.is_perf()) throw ValidationError("optimize needs a performance-law fit");
    const auto& params = std::get<PerfLawParams>(fit.params);

    const int sources = (a.d_prime ? 1 : 0) + (a.apen_report.empty() ? 0 : 1) + (a.dataset.empty() ? 0 : 1);
    if (sources != 1) throw ValidationError("give exactly one of --d-prime, --apen-report, --dataset");
    double d_prime = 0.0;
    if (a.d_prime) {
        d_prime = *a.d_prime;
    } else if (!a.apen_report.empty()) {
        d_prime = read_apen_report(a.apen_report);
    } else {
        auto it = fit.data_parameters.find(a.dataset);
        if (it == fit.data_parameters.end()) throw ValidationError("fit has no data parameter for '" + a.dataset + "'");
        d_prime = it->second;
    }

    SearchSpace space{parse_range(a.n_range), parse_range(a.d_range), std::nullopt};
    if (!a.budget.empty()) space.budget = parse_budget(a.budget);
    SearchOptions opt;
    opt.threads = ctx.threads;
    if (a.mode == "auto") {
        opt.mode = SearchMode::automatic;
    } else if (a.mode == "exhaustive") {
        opt.mode = SearchMode::exhaustive;
    } else if (a.mode == "coarse") {
        opt.mode = SearchMode::coarse_to_fine;
    } else {
        throw ValidationError("--mode must be auto, exhaustive or coarse");
    }
    const OptResult r = space.budget ? constrained_optimum(params, d_prime, space, opt)
                                     : global_optimum(params, d_prime, space, opt);

    ojson obj;
    obj["argmax_n"] = r.argmax_n;
    obj["argmax_d"] = r.argmax_d;
    obj["predicted"] = r.predicted;
    obj["evaluated_points"] = r.evaluated_points;
    obj["d_prime"] = d_prime;
    obj["n_range"] = {space.n_range.lo, space.n_range.hi};
    obj["d_range"] = {space.d_range.lo, space.d_range.hi};
    if (space.budget) {
        obj["budget"] = {{"functional", std::string(to_string(space.budget->functional))},
                         {"limit", space.budget->limit}};
        ojson frontier = ojson::array();
        for (const auto& f : *r.frontier) frontier.push_back({{"n", f.n}, {"d", f.d}, {"predicted", f.predicted}});
        obj["frontier"] = std::move(frontier);
    }
    emit(ctx, obj);
}

// ---------------------------------------------------------------------------
// potential

struct PotentialCmd {
    std::string archive;
    std::vector<std::string> fits;
    std::vector<std::string> observed;
    std::string table;
};

std::vector<PotentialEntry> read_table(const std::string& path) {
    ojson doc;
    try {
        doc = ojson::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    if (!doc.is_array()) throw ValidationError(path + ": expected a JSON array of entries");
    std::vector<PotentialEntry> entries;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& row = doc[i];
        const std::string where = path + " entry " + std::to_string(i);
        if (!row.is_object() || !row.contains("label") || !row["label"].is_string()) {
            throw ValidationError(where + ": needs a string 'label'");
        }
        PotentialEntry e;
        e.label = row["label"].get<std::string>();
        ParamMap values;
        for (const auto& [key, v] : row.items()) {
            if (key == "label") continue;
            if (!v.is_number()) throw ValidationError(where + ": '" + key + "' must be a number");
            if (key == "observed") {
                e.observed = v.get<double>();
            } else {
                values[key] = v.get<double>();
            }
        }
        e.params = perf_params_from_map(values);
        entries.push_back(std::move(e));
    }
    return entries;
}

void cmd_potential(const Context& ctx, const PotentialCmd& a) {
    std::vector<PotentialEntry> entries;
    if (!a.table.empty()) entries = read_table(a.table);
    if (!a.fits.empty()) {
        if (a.archive.empty()) throw ValidationError("--fit needs --archive");
        RunArchive archive = RunArchive::open(a.archive, false);
        for (const auto& name : a.fits) {
            FitResult fit = archive.load_fit(name);
            if (!fit.is_perf()) throw ValidationError("fit '" + name + "' is not a performance-law fit");
            entries.push_back({name, std::get<PerfLawParams>(fit.params), std::nullopt});
        }
    }
    for (const auto& [label, value] : parse_assignments(a.observed, "--observed")) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.label == label; });
        if (it == entries.end()) throw ValidationError("--observed names unknown fit '" + label + "'");
        it->observed = value;
    }
    std::set<std::string> labels;
    for (const auto& e : entries) {
        if (!labels.insert(e.label).second) throw ValidationError("duplicate label '" + e.label + "'");
    }
    const PotentialReport report = scaling_potential(entries);

    if (!ctx.json()) {
        *ctx.out << render_text(report);
        return;
    }
    ojson rows = ojson::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"label", r.label},
                        {"w1", r.w1},
                        {"w2", r.w2},
                        {"w3", r.w3},
                        {"w4", r.w4},
                        {"observed", optional_number(r.observed)},
                        {"reading", r.reading}});
    }
    ojson obj;
    obj["rows"] = std::move(rows);
    obj["kendall_tau"] = optional_number(report.kendall_tau);
    obj["tau_status"] = report.kendall_tau ? "defined" : (report.tau_tied ? "tie" : "unavailable");
    obj["rule"] = report.rule;
    emit(ctx, obj);
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::io: return kIo;
        case ErrorKind::validation: return kValidation;
        case ErrorKind::numeric: return kNumeric;
    }
    return kUsage;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Performance-law toolkit for sequential recommendation experiments", "perflaw"};
    app.set_version_flag("--version", PERFLAW_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML file of option values; command-line flags win");

    Context ctx;
    ctx.out = &out;
    app.add_option("--output", ctx.output, "Report format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();
    auto* threads_opt = app.add_option("--threads", ctx.threads, "Worker threads for fits and searches")
        ->envname("PERFLAW_THREADS")
        ->check(CLI::Range(1u, 1024u))
        ->capture_default_str();

    std::vector<std::pair<CLI::App*, std::function<void()>>> actions;

    SeqInput stats_in;
    auto* stats = app.add_subcommand("stats", "Dataset statistics");
    add_seq_input(stats, stats_in);
    actions.emplace_back(stats, [&] { cmd_stats(ctx, stats_in); });

    ApEnCmd apen_args;
    auto* apen = app.add_subcommand("apen", "Approximate entropy, ApEn' and D'");
    add_seq_input(apen, apen_args.in);
    add_apen_args(apen, apen_args.apen);
    apen->add_option("--reference-chain", apen_args.reference,
                     "Row-major transition matrix whose entropy rate is printed alongside")
        ->delimiter(',');
    actions.emplace_back(apen, [&] { cmd_apen(ctx, apen_args); });

    FitCmd fit_loss_args, fit_perf_args;
    fit_loss_args.perf = false;
    auto* fit = app.add_subcommand("fit", "Fit a scaling law");
    fit->require_subcommand(1);
    for (auto* args : {&fit_loss_args, &fit_perf_args}) {
        auto* sub = fit->add_subcommand(args->perf ? "perf" : "loss",
                                        args->perf ? "Fit the performance law" : "Fit the loss law");
        sub->add_option("--archive", args->archive, "Run archive directory; fits/<name>.json is written here")
            ->required();
        sub->add_option("--runs", args->runs, "RunRecord JSONL file (default: the archive's runs)");
        sub->add_option("--name", args->name, "Fit name (default: perf or loss)");
        sub->add_option("--dataset", args->dataset, "Only runs of this dataset_id");
        sub->add_option("--metric", args->metric, "Only runs with this metric, e.g. hr@10");
        sub->add_option("--data-scale", args->data_scale, "supplied or fitted")->capture_default_str();
        sub->add_option("--mask", args->masks, "Freeze a parameter: name=value")->delimiter(',');
        sub->add_option("--free", args->freed, "Release a parameter frozen by default")->delimiter(',');
        sub->add_option("--bounds", args->bounds, "Override a parameter box: name=lo:hi")->delimiter(',');
        sub->add_option("--init", args->init, "First-start values: name=value")->delimiter(',');
        sub->add_option("--starts", args->starts, "Multi-start count")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_option("--seed", args->seed, "Multi-start seed")->capture_default_str();
        if (!args->perf) {
            sub->add_option("--form", args->form, "simplified or full")->capture_default_str();
            sub->add_option("--size", args->size, "Model-size covariate: layers or layers_d2")->capture_default_str();
        }
        actions.emplace_back(sub, [&ctx, args] { cmd_fit(ctx, *args); });
    }

    OptimizeCmd opt_args;
    auto* optimize = app.add_subcommand("optimize", "Best (n_layers, d_emb) under a fitted performance law");
    optimize->add_option("--archive", opt_args.archive, "Run archive holding the fit");
    optimize->add_option("--fit", opt_args.fit, "Fit name inside the archive");
    optimize->add_option("--fit-file", opt_args.fit_file, "Fit document path");
    optimize->add_option("--d-prime", opt_args.d_prime, "Data parameter D'");
    optimize->add_option("--apen-report", opt_args.apen_report, "Take D' from an apen JSON report");
    optimize->add_option("--dataset", opt_args.dataset, "Take D' from the fit's data parameter for this dataset");
    optimize->add_option("--n-range", opt_args.n_range, "Layer range lo:hi")->capture_default_str();
    optimize->add_option("--d-range", opt_args.d_range, "Embedding range lo:hi")->capture_default_str();
    optimize->add_option("--budget", opt_args.budget, "Constraint, e.g. n_times_d:512 or n_times_d_squared:1e6");
    optimize->add_option("--mode", opt_args.mode, "auto, exhaustive or coarse")->capture_default_str();
    actions.emplace_back(optimize, [&] { cmd_optimize(ctx, opt_args); });

    auto* synth = app.add_subcommand("synth", "Generate synthetic fixtures");
    synth->require_subcommand(1);
    SynthMarkovCmd markov_args;
    auto* markov = synth->add_subcommand("markov", "Sequences from a first-order Markov chain");
    markov->add_option("--states", markov_args.states, "Number of states");
    markov->add_option("--p", markov_args.p, "Row-major transition matrix")->delimiter(',');
    markov->add_flag("--uniform", markov_args.uniform, "Use the uniform chain on --states states");
    markov->add_option("--len", markov_args.length, "Tokens per user")->capture_default_str();
    markov->add_option("--users", markov_args.users, "Number of users")->capture_default_str();
    markov->add_option("--seed", markov_args.seed, "Generator seed")->capture_default_str();
    markov->add_option("--out", markov_args.out, "Output sequence file")->required();
    markov->add_option("--format", markov_args.format, "csv or jsonl (default: from the extension)");
    actions.emplace_back(markov, [&] { cmd_synth_markov(ctx, markov_args); });

    SynthRunsCmd runs_args;
    auto* runs = synth->add_subcommand("runs", "Run records sampled from a law with Gaussian noise");
    runs->add_option("--law", runs_args.law, "perf or loss")->capture_default_str();
    runs->add_option("--form", runs_args.form, "Loss-law form")->capture_default_str();
    runs->add_option("--size", runs_args.size, "Loss-law size covariate")->capture_default_str();
    runs->add_option("--params", runs_args.params, "Law parameters name=value (perf: unset ones are 0, w6 is 1)")
        ->delimiter(',')
        ->required();
    runs->add_option("--n-list", runs_args.n_list, "Layer counts")->delimiter(',');
    runs->add_option("--d-list", runs_args.d_list, "Embedding sizes")->delimiter(',');
    runs->add_option("--d-prime", runs_args.d_primes, "Data parameters, one dataset each")->delimiter(',');
    runs->add_option("--apen-report", runs_args.apen_reports, "apen JSON reports supplying D'");
    runs->add_option("--dataset", runs_args.datasets, "Dataset ids, one per data parameter")->delimiter(',');
    runs->add_option("--metric", runs_args.metric, "Metric (default hr@10 for perf, loss for loss)");
    runs->add_option("--sigma", runs_args.sigma, "Gaussian noise standard deviation")->capture_default_str();
    runs->add_option("--seed", runs_args.seed, "Noise seed")->capture_default_str();
    runs->add_flag("--omit-d-prime", runs_args.omit_d_prime, "Leave d_prime out of the records");
    runs->add_option("--out", runs_args.out, "Output RunRecord JSONL file")->required();
    actions.emplace_back(runs, [&] { cmd_synth_runs(ctx, runs_args); });

    BoundCmd bound_args;
    auto* bound = app.add_subcommand("verify-bound", "Encoding-length bound diagnostic");
    add_seq_input(bound, bound_args.in);
    add_apen_args(bound, bound_args.apen);
    actions.emplace_back(bound, [&] { cmd_verify_bound(ctx, bound_args); });

    PotentialCmd pot_args;
    auto* potential = app.add_subcommand("potential", "Compare scaling potential across fits");
    potential->add_option("--archive", pot_args.archive, "Run archive holding the fits");
    potential->add_option("--fit", pot_args.fits, "Fit names")->delimiter(',');
    potential->add_option("--observed", pot_args.observed, "Observed performance per fit: name=value")
        ->delimiter(',');
    potential->add_option("--table", pot_args.table, "JSON array of {label, w1..w4, observed} entries");
    actions.emplace_back(potential, [&] { cmd_potential(ctx, pot_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "error: " << e.what() << "\nRun with --help for usage.\n";
        return dynamic_cast<const CLI::FileError*>(&e) ? kIo : kUsage;
    }

    // CLI11 silently skips environment values that fail validation.
    if (const char* env = std::getenv("PERFLAW_THREADS"); env && threads_opt->count() == 0) {
        unsigned v = 0;
        if (!CLI::detail::lexical_cast(std::string(env), v) || v < 1 || v > 1024) {
            err << "error: PERFLAW_THREADS=" << env << " is not a thread count in [1, 1024]\n";
            return kUsage;
        }
        ctx.threads = v;
    }

    try {
        for (auto& [sub, action] : actions) {
            if (sub->parsed()) {
                action();
                return kOk;
            }
        }
        err << "error: no command given\n";
        return kUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kUsage;
    }
}

}  // namespace perflaw::cli
