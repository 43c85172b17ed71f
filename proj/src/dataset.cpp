#include "perflaw/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "perflaw/error.hpp"
#include "text_util.hpp"

namespace perflaw {

namespace {

std::string at_line(std::size_t line, const std::string& msg) {
    return "line " + std::to_string(line) + ": " + msg;
}

template <typename Int>
std::vector<Int> parse_int_list(std::string_view field, std::size_t line, const char* what) {
    std::vector<Int> out;
    for (std::string_view tok : detail::split_whitespace(field)) {
        Int value{};
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
            throw ValidationError(at_line(line, std::string("malformed ") + what + " value '" +
                                                    std::string(tok) + "'"));
        }
        out.push_back(value);
    }
    return out;
}

void check_item_ids(std::span<const ItemId> items, std::size_t line) {
    if (items.empty()) throw ValidationError(at_line(line, "empty item list"));
    for (ItemId id : items) {
        if (id <= 0) {
            throw ValidationError(at_line(line, "non-positive item id " + std::to_string(id)));
        }
    }
}

// Accumulates rows into one sequence per user, preserving first-seen user order.
class SequenceBuilder {
public:
    void add(std::string user, std::vector<ItemId> items, std::optional<std::vector<int>> ratings,
             std::size_t line) {
        check_item_ids(items, line);
        if (ratings && ratings->size() != items.size()) {
            throw ValidationError(at_line(line, "ratings length " + std::to_string(ratings->size()) +
                                                    " does not match items length " +
                                                    std::to_string(items.size())));
        }
        auto it = index_.find(user);
        if (it == index_.end()) {
            index_.emplace(user, rows_.size());
            rows_.push_back({std::move(user), std::move(items), std::move(ratings)});
            return;
        }
        Row& row = rows_[it->second];
        if (row.ratings.has_value() != ratings.has_value()) {
            throw ValidationError(at_line(line, "user '" + row.user + "' mixes rows with and without ratings"));
        }
        row.items.insert(row.items.end(), items.begin(), items.end());
        if (ratings) row.ratings->insert(row.ratings->end(), ratings->begin(), ratings->end());
    }

    std::vector<InteractionSequence> finish() && {
        if (rows_.empty()) throw ValidationError("no sequences");
        std::vector<InteractionSequence> out;
        out.reserve(rows_.size());
        for (Row& row : rows_) {
            out.emplace_back(std::move(row.user), std::move(row.items), std::move(row.ratings));
        }
        return out;
    }

private:
    struct Row {
        std::string user;
        std::vector<ItemId> items;
        std::optional<std::vector<int>> ratings;
    };
    std::vector<Row> rows_;
    std::unordered_map<std::string, std::size_t> index_;
};

std::vector<InteractionSequence> parse_csv(std::string_view text) {
    SequenceBuilder builder;
    bool first_content_line = true;
    std::size_t expected_fields = 0;  // 0 until a header or first row fixes it
    std::size_t line_no = 0;
    for (std::string_view raw : detail::split_lines(text)) {
        ++line_no;
        std::string_view line = detail::trim(raw);
        if (line.empty()) continue;
        auto fields = detail::split(line, ',');
        if (first_content_line) {
            first_content_line = false;
            if (detail::trim(fields[0]) == "user_id") {
                bool ok = (fields.size() == 2 || fields.size() == 3) && detail::trim(fields[1]) == "items" &&
                          (fields.size() == 2 || detail::trim(fields[2]) == "ratings");
                if (!ok) throw ValidationError(at_line(line_no, "header must be user_id,items[,ratings]"));
                expected_fields = fields.size();
                continue;
            }
        }
        if (fields.size() != 2 && fields.size() != 3) {
            throw ValidationError(at_line(line_no, "expected 2 or 3 comma-separated fields, got " +
                                                       std::to_string(fields.size())));
        }
        if (expected_fields != 0 && fields.size() != expected_fields) {
            throw ValidationError(at_line(line_no, "field count does not match header"));
        }
        std::string user(detail::trim(fields[0]));
        if (user.empty()) throw ValidationError(at_line(line_no, "empty user_id"));
        auto items = parse_int_list<ItemId>(fields[1], line_no, "item");
        std::optional<std::vector<int>> ratings;
        if (fields.size() == 3) ratings = parse_int_list<int>(fields[2], line_no, "rating");
        builder.add(std::move(user), std::move(items), std::move(ratings), line_no);
    }
    return std::move(builder).finish();
}

std::vector<InteractionSequence> parse_jsonl(std::string_view text) {
    SequenceBuilder builder;
    std::size_t line_no = 0;
    for (std::string_view raw : detail::split_lines(text)) {
        ++line_no;
        std::string_view line = detail::trim(raw);
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(at_line(line_no, std::string("invalid JSON: ") + e.what()));
        }
        if (!obj.is_object()) throw ValidationError(at_line(line_no, "expected a JSON object"));
        auto user_it = obj.find("user_id");
        if (user_it == obj.end() || !user_it->is_string()) {
            throw ValidationError(at_line(line_no, "missing string field 'user_id'"));
        }
        auto items_it = obj.find("items");
        if (items_it == obj.end() || !items_it->is_array()) {
            throw ValidationError(at_line(line_no, "missing array field 'items'"));
        }
        std::vector<ItemId> items;
        for (const auto& v : *items_it) {
            if (!v.is_number_integer()) throw ValidationError(at_line(line_no, "item ids must be integers"));
            items.push_back(v.get<ItemId>());
        }
        std::optional<std::vector<int>> ratings;
        if (auto r = obj.find("ratings"); r != obj.end() && !r->is_null()) {
            if (!r->is_array()) throw ValidationError(at_line(line_no, "'ratings' must be an array"));
            ratings.emplace();
            for (const auto& v : *r) {
                if (!v.is_number_integer()) throw ValidationError(at_line(line_no, "ratings must be integers"));
                ratings->push_back(v.get<int>());
            }
        }
        builder.add(user_it->get<std::string>(), std::move(items), std::move(ratings), line_no);
    }
    return std::move(builder).finish();
}

}  // namespace

InteractionSequence::InteractionSequence(std::string user_id, std::vector<ItemId> items,
                                         std::optional<std::vector<int>> ratings)
    : user_id_(std::move(user_id)), items_(std::move(items)), ratings_(std::move(ratings)) {
    if (items_.empty()) throw ValidationError("sequence for user '" + user_id_ + "' has no items");
    for (ItemId id : items_) {
        if (id <= 0) {
            throw ValidationError("sequence for user '" + user_id_ + "' has non-positive item id " +
                                  std::to_string(id));
        }
    }
    if (ratings_ && ratings_->size() != items_.size()) {
        throw ValidationError("sequence for user '" + user_id_ + "' has mismatched ratings length");
    }
}

InteractionSequence InteractionSequence::suffix(std::size_t count) const {
    if (count >= items_.size()) return *this;
    auto first = items_.size() - count;
    std::vector<ItemId> items(items_.begin() + static_cast<std::ptrdiff_t>(first), items_.end());
    std::optional<std::vector<int>> ratings;
    if (ratings_) ratings.emplace(ratings_->begin() + static_cast<std::ptrdiff_t>(first), ratings_->end());
    return InteractionSequence(user_id_, std::move(items), std::move(ratings));
}

SequenceFormat parse_sequence_format(std::string_view name) {
    if (name == "csv") return SequenceFormat::csv;
    if (name == "jsonl") return SequenceFormat::jsonl;
    throw ValidationError("unknown sequence format '" + std::string(name) + "' (expected csv or jsonl)");
}

std::optional<SequenceFormat> format_from_extension(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    if (ext == ".csv") return SequenceFormat::csv;
    if (ext == ".jsonl" || ext == ".json") return SequenceFormat::jsonl;
    return std::nullopt;
}

std::vector<InteractionSequence> parse_sequences(std::string_view text, SequenceFormat format) {
    return format == SequenceFormat::csv ? parse_csv(text) : parse_jsonl(text);
}

std::vector<InteractionSequence> load_sequences(const std::filesystem::path& path, SequenceFormat format) {
    return parse_sequences(detail::read_file(path), format);
}

void write_sequences(const std::filesystem::path& path, std::span<const InteractionSequence> seqs,
                     SequenceFormat format) {
    std::ostringstream out;
    if (format == SequenceFormat::csv) {
        bool with_ratings = !seqs.empty() && seqs.front().ratings().has_value();
        out << (with_ratings ? "user_id,items,ratings\n" : "user_id,items\n");
        for (const auto& s : seqs) {
            out << s.user_id() << ',';
            for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s.items()[i];
            if (with_ratings) {
                out << ',';
                const auto& r = s.ratings().value();
                for (std::size_t i = 0; i < r.size(); ++i) out << (i ? " " : "") << r[i];
            }
            out << '\n';
        }
    } else {
        for (const auto& s : seqs) {
            nlohmann::ordered_json obj;
            obj["user_id"] = s.user_id();
            obj["items"] = std::vector<ItemId>(s.items().begin(), s.items().end());
            if (s.ratings()) obj["ratings"] = *s.ratings();
            out << obj.dump() << '\n';
        }
    }
    detail::write_file(path, out.str());
}

DatasetStats compute_stats(std::span<const InteractionSequence> seqs) {
    if (seqs.empty()) throw ValidationError("cannot compute statistics of an empty dataset");
    DatasetStats stats;
    stats.num_users = seqs.size();
    std::unordered_set<ItemId> vocab;
    for (const auto& s : seqs) {
        stats.tokens += s.size();
        stats.s_max = std::max(stats.s_max, s.size());
        vocab.insert(s.items().begin(), s.items().end());
    }
    stats.s_mean = static_cast<double>(stats.tokens) / static_cast<double>(stats.num_users);
    stats.vocab = vocab.size();
    return stats;
}

std::vector<InteractionSequence> truncate(std::span<const InteractionSequence> seqs, std::size_t s_max) {
    if (s_max == 0) throw ValidationError("truncation length must be at least 1");
    std::vector<InteractionSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) out.push_back(s.suffix(s_max));
    return out;
}

double sequence_distribution_entropy(std::span<const InteractionSequence> seqs) {
    if (seqs.empty()) throw ValidationError("cannot compute entropy of an empty dataset");
    // Keyed on the item vector; ratings do not distinguish sequences.
    std::vector<std::span<const ItemId>> keys;
    keys.reserve(seqs.size());
    for (const auto& s : seqs) keys.push_back(s.items());
    std::sort(keys.begin(), keys.end(), [](auto a, auto b) {
        return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    });
    const double total = static_cast<double>(keys.size());
    double h = 0.0;
    std::size_t i = 0;
    while (i < keys.size()) {
        std::size_t j = i + 1;
        while (j < keys.size() && std::ranges::equal(keys[i], keys[j])) ++j;
        double p = static_cast<double>(j - i) / total;
        h -= p * std::log(p);
        i = j;
    }
    return h == 0.0 ? 0.0 : h;
}

}  // namespace perflaw
