#include "perflaw/runstore.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <limits>
#include <memory>
#include <set>

#include <json.hpp>
#include <openssl/evp.h>

#include "perflaw/error.hpp"
#include "text_util.hpp"

#ifndef PERFLAW_VERSION
#define PERFLAW_VERSION "0.0.0"
#endif

namespace perflaw {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kRunsFile = "runs.jsonl";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kLockFile = ".lock";

class WriterLock {
public:
    explicit WriterLock(const fs::path& dir) {
        const auto file = dir / kLockFile;
        fd_ = ::open(file.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IoError("cannot open lock file " + file.string() + ": " + std::strerror(errno));
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            const int err = errno;
            ::close(fd_);
            if (err == EWOULDBLOCK) throw IoError("archive " + dir.string() + " is locked by another writer");
            throw IoError("cannot lock " + file.string() + ": " + std::strerror(err));
        }
    }
    ~WriterLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    WriterLock(const WriterLock&) = delete;
    WriterLock& operator=(const WriterLock&) = delete;

private:
    int fd_ = -1;
};

std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
        char* end = nullptr;
        long long v = std::strtoll(epoch, &end, 10);
        if (*end == '\0' && v >= 0) t = static_cast<std::time_t>(v);
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void check_fit_name(std::string_view name) {
    const bool ok = !name.empty() && name != "." && name != ".." &&
                    std::all_of(name.begin(), name.end(), [](char c) {
                        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
                    });
    if (!ok) throw ValidationError("invalid fit name '" + std::string(name) + "' (use letters, digits, _ - .)");
}

const ojson& require(const ojson& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(std::string("missing field '") + key + "'");
    return *it;
}

double number_field(const ojson& obj, const char* key) {
    const auto& v = require(obj, key);
    if (!v.is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
    return v.get<double>();
}

int int_field(const ojson& v, const char* key) {
    if (!v.is_number_integer()) throw ValidationError(std::string("field '") + key + "' must be an integer");
    auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ValidationError(std::string("field '") + key + "' out of range");
    }
    return static_cast<int>(x);
}

std::vector<RunRecord> parse_run_lines(std::string_view text, const std::string& source) {
    std::vector<RunRecord> runs;
    const auto lines = detail::split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::trim(lines[i]).empty()) continue;
        try {
            runs.push_back(run_from_json(lines[i]));
        } catch (const ValidationError& e) {
            throw ValidationError(source + " line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return runs;
}

std::string join_lines(std::span<const RunRecord> runs) {
    std::string out;
    for (const auto& r : runs) {
        out += run_to_json(r);
        out += '\n';
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string run_to_json(const RunRecord& run) {
    ojson obj;
    obj["dataset_id"] = run.dataset_id;
    obj["n_layers"] = run.n_layers;
    obj["d_emb"] = run.d_emb;
    obj["metric"] = std::string(metric_name(run.metric.kind));
    if (run.metric.k) obj["k"] = *run.metric.k;
    obj["value"] = run.value;
    if (run.d_prime) obj["d_prime"] = *run.d_prime;
    return obj.dump();
}

RunRecord run_from_json(std::string_view line) {
    ojson obj;
    try {
        obj = ojson::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ValidationError("record must be a JSON object");
    static const std::set<std::string> known = {"dataset_id", "n_layers", "d_emb", "metric", "k", "value", "d_prime"};
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) throw ValidationError("unknown field '" + key + "'");
    }
    RunRecord run;
    const auto& id = require(obj, "dataset_id");
    if (!id.is_string()) throw ValidationError("field 'dataset_id' must be a string");
    run.dataset_id = id.get<std::string>();
    run.n_layers = int_field(require(obj, "n_layers"), "n_layers");
    run.d_emb = int_field(require(obj, "d_emb"), "d_emb");
    const auto& metric = require(obj, "metric");
    if (!metric.is_string()) throw ValidationError("field 'metric' must be a string");
    run.metric = parse_metric(metric.get<std::string>());
    if (auto it = obj.find("k"); it != obj.end() && !it->is_null()) {
        int k = int_field(*it, "k");
        if (run.metric.k && *run.metric.k != k) throw ValidationError("metric cutoff disagrees with field 'k'");
        run.metric.k = k;
    }
    run.value = number_field(obj, "value");
    if (auto it = obj.find("d_prime"); it != obj.end() && !it->is_null()) {
        if (!it->is_number()) throw ValidationError("field 'd_prime' must be a number");
        run.d_prime = it->get<double>();
    }
    validate(run);
    return run;
}

std::vector<RunRecord> load_run_file(const fs::path& path) {
    return parse_run_lines(detail::read_file(path), path.string());
}

void write_run_file(const fs::path& path, std::span<const RunRecord> runs) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
        try {
            validate(runs[i]);
        } catch (const ValidationError& e) {
            throw ValidationError("record " + std::to_string(i) + ": " + e.what());
        }
    }
    detail::write_file(path, join_lines(runs));
}

std::string fit_to_json(const FitResult& fit) {
    ojson obj;
    if (fit.is_perf()) {
        obj["law"] = "perf";
        const auto& p = std::get<PerfLawParams>(fit.params);
        auto values = p.to_array();
        auto names = perf_param_names();
        for (std::size_t i = 0; i < names.size(); ++i) obj[std::string(names[i])] = values[i];
    } else {
        const auto& lp = std::get<LossLawParams>(fit.params);
        obj["law"] = "loss";
        obj["form"] = std::string(to_string(form_of(lp)));
        auto map = to_param_map(lp);
        for (auto name : loss_param_names(form_of(lp))) obj[std::string(name)] = map.at(std::string(name));
        obj["size"] = std::string(to_string(fit.size));
    }
    obj["r_squared"] = fit.r_squared;
    obj["rss"] = fit.rss;
    obj["converged"] = fit.converged;
    obj["iterations"] = fit.iterations;
    obj["start_index"] = fit.start_index;
    obj["num_points"] = fit.num_points;
    obj["grad_norm"] = fit.grad_norm;
    obj["frozen"] = fit.frozen;
    ojson data = ojson::object();
    for (const auto& [id, v] : fit.data_parameters) data[id] = v;
    obj["data_parameters"] = std::move(data);
    return obj.dump(2) + "\n";
}

FitResult fit_from_json(std::string_view text) {
    ojson obj;
    try {
        obj = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed fit document: ") + e.what());
    }
    if (!obj.is_object()) throw ValidationError("fit document must be a JSON object");
    const auto& law = require(obj, "law");
    FitResult fit;
    if (law == "perf") {
        ParamMap values;
        for (auto name : perf_param_names()) values[std::string(name)] = number_field(obj, std::string(name).c_str());
        fit.params = perf_params_from_map(values);
    } else if (law == "loss") {
        const auto& form_field = require(obj, "form");
        if (!form_field.is_string()) throw ValidationError("field 'form' must be a string");
        const LossForm form = parse_loss_form(form_field.get<std::string>());
        ParamMap values;
        for (auto name : loss_param_names(form)) values[std::string(name)] = number_field(obj, std::string(name).c_str());
        fit.params = loss_params_from_map(form, values);
        if (auto it = obj.find("size"); it != obj.end()) fit.size = parse_size_covariate(it->get<std::string>());
    } else {
        throw ValidationError("field 'law' must be \"perf\" or \"loss\"");
    }
    fit.r_squared = number_field(obj, "r_squared");
    fit.rss = number_field(obj, "rss");
    const auto& converged = require(obj, "converged");
    if (!converged.is_boolean()) throw ValidationError("field 'converged' must be a boolean");
    fit.converged = converged.get<bool>();
    if (auto it = obj.find("iterations"); it != obj.end()) fit.iterations = it->get<int>();
    if (auto it = obj.find("start_index"); it != obj.end()) fit.start_index = it->get<std::size_t>();
    if (auto it = obj.find("num_points"); it != obj.end()) fit.num_points = it->get<std::size_t>();
    if (auto it = obj.find("grad_norm"); it != obj.end()) fit.grad_norm = it->get<double>();
    if (auto it = obj.find("frozen"); it != obj.end()) fit.frozen = it->get<std::vector<std::string>>();
    if (auto it = obj.find("data_parameters"); it != obj.end()) {
        for (const auto& [id, v] : it->items()) fit.data_parameters[id] = v.get<double>();
    }
    return fit;
}

// ---------------------------------------------------------------------------

DuplicatePolicy parse_duplicate_policy(std::string_view name) {
    if (name == "reject") return DuplicatePolicy::reject;
    if (name == "replace") return DuplicatePolicy::replace;
    if (name == "keep-both" || name == "keep_both") return DuplicatePolicy::keep_both;
    throw ValidationError("unknown duplicate policy '" + std::string(name) + "' (reject, replace, keep-both)");
}

std::string_view to_string(DuplicatePolicy policy) {
    switch (policy) {
        case DuplicatePolicy::reject: return "reject";
        case DuplicatePolicy::replace: return "replace";
        case DuplicatePolicy::keep_both: return "keep-both";
    }
    return "reject";
}

std::string run_key(const RunRecord& run) {
    return run.dataset_id + "/" + std::to_string(run.n_layers) + "/" + std::to_string(run.d_emb) + "/" +
           to_string(run.metric);
}

bool RunFilter::matches(const RunRecord& run) const {
    if (dataset_id && run.dataset_id != *dataset_id) return false;
    if (metric && run.metric.kind != *metric) return false;
    if (k && run.metric.k != k) return false;
    return true;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    if (in.bad()) throw IoError("read error on " + path.string());
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

RunArchive RunArchive::open(const fs::path& dir, bool create) {
    RunArchive archive(dir);
    const auto manifest_path = dir / kManifestFile;
    if (!fs::exists(manifest_path)) {
        if (!create) throw IoError("no run archive at " + dir.string());
        std::error_code ec;
        fs::create_directories(dir / "fits", ec);
        if (ec) throw IoError("cannot create archive " + dir.string() + ": " + ec.message());
        WriterLock lock(dir);
        archive.manifest_.created = utc_timestamp();
        archive.manifest_.tool_version = PERFLAW_VERSION;
        archive.write_manifest();
        if (!fs::exists(dir / kRunsFile)) detail::write_file(dir / kRunsFile, "");
        return archive;
    }
    ojson obj;
    try {
        obj = ojson::parse(detail::read_file(manifest_path));
        archive.manifest_.created = obj.at("created").get<std::string>();
        archive.manifest_.tool_version = obj.at("tool_version").get<std::string>();
        for (const auto& d : obj.at("datasets")) {
            archive.manifest_.datasets.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("corrupt manifest " + manifest_path.string() + ": " + e.what());
    }
    archive.verify_datasets();
    return archive;
}

void RunArchive::write_manifest() const {
    ojson obj;
    obj["created"] = manifest_.created;
    obj["tool_version"] = manifest_.tool_version;
    ojson datasets = ojson::array();
    for (const auto& d : manifest_.datasets) datasets.push_back({{"path", d.path}, {"sha256", d.sha256}});
    obj["datasets"] = std::move(datasets);
    detail::write_file(dir_ / kManifestFile, obj.dump(2) + "\n");
}

std::size_t RunArchive::append_runs(std::span<const RunRecord> runs, DuplicatePolicy policy) {
    for (std::size_t i = 0; i < runs.size(); ++i) {
        try {
            validate(runs[i]);
        } catch (const ValidationError& e) {
            throw ValidationError("record " + std::to_string(i) + ": " + e.what());
        }
    }
    WriterLock lock(dir_);
    auto stored = load_runs();
    std::set<std::string> keys;
    for (const auto& r : stored) keys.insert(run_key(r));

    if (policy == DuplicatePolicy::keep_both) {
        detail::append_file(dir_ / kRunsFile, join_lines(runs));
        return runs.size();
    }
    std::set<std::string> incoming;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto key = run_key(runs[i]);
        if (!incoming.insert(key).second) {
            throw ValidationError("record " + std::to_string(i) + ": duplicate key " + key + " within the batch");
        }
        if (policy == DuplicatePolicy::reject && keys.count(key)) {
            throw ValidationError("record " + std::to_string(i) + ": duplicate key " + key + " already stored");
        }
    }
    if (policy == DuplicatePolicy::reject) {
        detail::append_file(dir_ / kRunsFile, join_lines(runs));
        return runs.size();
    }
    std::erase_if(stored, [&](const RunRecord& r) { return incoming.count(run_key(r)) > 0; });
    stored.insert(stored.end(), runs.begin(), runs.end());
    detail::write_file(dir_ / kRunsFile, join_lines(stored));
    return runs.size();
}

std::vector<RunRecord> RunArchive::load_runs(const RunFilter& filter) const {
    const auto file = dir_ / kRunsFile;
    if (!fs::exists(file)) return {};
    auto runs = parse_run_lines(detail::read_file(file), file.string());
    std::erase_if(runs, [&](const RunRecord& r) { return !filter.matches(r); });
    return runs;
}

void RunArchive::save_fit(std::string_view name, const FitResult& fit) {
    check_fit_name(name);
    WriterLock lock(dir_);
    detail::write_file(dir_ / "fits" / (std::string(name) + ".json"), fit_to_json(fit));
}

FitResult RunArchive::load_fit(std::string_view name) const {
    check_fit_name(name);
    const auto file = dir_ / "fits" / (std::string(name) + ".json");
    if (!fs::exists(file)) throw IoError("no fit named '" + std::string(name) + "' in " + dir_.string());
    try {
        return fit_from_json(detail::read_file(file));
    } catch (const ValidationError& e) {
        throw ValidationError(file.string() + ": " + e.what());
    }
}

std::vector<std::string> RunArchive::fit_names() const {
    std::vector<std::string> names;
    const auto fits = dir_ / "fits";
    if (!fs::exists(fits)) return names;
    for (const auto& entry : fs::directory_iterator(fits)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

void RunArchive::register_dataset(const fs::path& file) {
    if (!fs::exists(file)) throw IoError("dataset " + file.string() + " does not exist");
    const auto rel = fs::relative(fs::absolute(file), fs::absolute(dir_)).generic_string();
    const auto digest = sha256_file(file);
    WriterLock lock(dir_);
    auto it = std::find_if(manifest_.datasets.begin(), manifest_.datasets.end(),
                           [&](const DatasetDigest& d) { return d.path == rel; });
    if (it != manifest_.datasets.end()) {
        it->sha256 = digest;
    } else {
        manifest_.datasets.push_back({rel, digest});
    }
    write_manifest();
}

void RunArchive::verify_datasets() const {
    for (const auto& d : manifest_.datasets) {
        const auto file = dir_ / d.path;
        if (!fs::exists(file)) throw IoError("registered dataset " + file.string() + " is missing");
        if (sha256_file(file) != d.sha256) {
            throw ValidationError("dataset " + file.string() + " does not match its recorded SHA-256");
        }
    }
}

}  // namespace perflaw
