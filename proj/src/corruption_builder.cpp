#include "latent_align/corruption_builder.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "latent_align/http_client.hpp"
#include "latent_align/toy_world.hpp"
#include "latent_align/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace latent_align {

namespace {

constexpr std::string_view kTemplate =
    R"(You are a highly specialized text transformation AI. Your sole task is to receive an original sentence and generate a single, corrupted version of that sentence.

Rules for Corruption:
1.  Maintain Original Structure:  The overall sentence flow must remain identical to the original.

2.  Targeted Non-Factuality: Only modify the aspect of the sentence corresponding to the '{ERROR_TYPE}' provided. This modification should render that specific aspect non-factual or illogical within the context of the original sentence.

3.  Single Output: Output only the corrupted sentence. No additional text, explanations, or formatting.

4. Coherent Output: Ensure that the output is coherent with the new changes.

Change the {ERROR_TYPE} in the following PROMPT:
PROMPT: {PROMPT})";

constexpr std::string_view kErrorTypeSlot = "{ERROR_TYPE}";
constexpr std::string_view kPromptSlot = "{PROMPT}";

}  // namespace

std::string_view error_type_id(ErrorType type) {
    switch (type) {
        case ErrorType::color: return "color";
        case ErrorType::count: return "count";
        case ErrorType::background: return "background";
        case ErrorType::main_subject: return "main_subject";
    }
    return "color";
}

std::string_view error_type_label(ErrorType type) {
    return type == ErrorType::main_subject ? "main subject" : error_type_id(type);
}

ErrorType parse_error_type(std::string_view id) {
    for (auto t : kErrorTypes) {
        if (id == error_type_id(t) || id == error_type_label(t)) return t;
    }
    throw argument_error("unknown error type '" + std::string(id) + "'");
}

std::string_view corruption_template() { return kTemplate; }

std::string render_corruption_prompt(ErrorType type, std::string_view prompt) {
    std::string out;
    out.reserve(kTemplate.size() + prompt.size() + 32);
    size_t pos = 0;
    while (pos < kTemplate.size()) {
        if (kTemplate.compare(pos, kErrorTypeSlot.size(), kErrorTypeSlot) == 0) {
            out += error_type_label(type);
            pos += kErrorTypeSlot.size();
        } else if (kTemplate.compare(pos, kPromptSlot.size(), kPromptSlot) == 0) {
            out += prompt;
            pos += kPromptSlot.size();
        } else {
            out.push_back(kTemplate[pos++]);
        }
    }
    return out;
}

Verdict validate_corruption(std::string_view original, std::string_view candidate) {
    if (candidate.empty()) return {false, "empty"};
    if (candidate.find('\n') != std::string_view::npos || candidate.find('\r') != std::string_view::npos) {
        return {false, "multiline"};
    }
    if (to_lower(candidate) == to_lower(original)) return {false, "unchanged"};
    const double ratio = static_cast<double>(candidate.size()) / static_cast<double>(std::max<size_t>(1, original.size()));
    if (ratio < 0.5 || ratio > 2.0) return {false, "length ratio " + std::to_string(ratio) + " outside [0.5, 2.0]"};
    return {true, {}};
}

json llm_config_to_json(const LlmConfig & c) {
    return json{{"endpoint", c.endpoint},
                {"model_tag", c.model_tag},
                {"temperature", c.temperature},
                {"timeout_s", static_cast<double>(c.timeout.count()) / 1000.0},
                {"retries", c.max_retries},
                {"api_key_env", c.api_key_env},
                {"transcript_dir", c.transcript_dir ? json(c.transcript_dir->string()) : json(nullptr)},
                {"offline", c.offline}};
}

LlmConfig llm_config_from_json(const json & j) {
    LlmConfig c;
    try {
        c.endpoint = j.at("endpoint").get<std::string>();
        c.model_tag = j.value("model_tag", c.model_tag);
        c.temperature = j.value("temperature", c.temperature);
        const double timeout_s = j.value("timeout_s", 60.0);
        if (!(timeout_s > 0.0)) throw config_error("LLM timeout must be > 0");
        c.timeout = std::chrono::milliseconds(static_cast<int64_t>(timeout_s * 1000.0));
        c.max_retries = j.value("retries", c.max_retries);
        if (c.max_retries < 0) throw config_error("LLM retries must be >= 0");
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        if (j.contains("transcript_dir") && !j.at("transcript_dir").is_null()) {
            c.transcript_dir = j.at("transcript_dir").get<std::string>();
        }
        c.offline = j.value("offline", false);
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid LLM config: ") + e.what());
    }
    return c;
}

std::string HttpLlmClient::complete(const std::string & instruction, int /*attempt*/) {
    json body{{"model", config_.model_tag},
              {"temperature", config_.temperature},
              {"messages", json::array({{{"role", "user"}, {"content", instruction}}})}};
    std::map<std::string, std::string> headers;
    if (const char * key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers["Authorization"] = std::string("Bearer ") + key;
    }
    const auto reply = http_post_json(config_.endpoint, body, config_.timeout, headers);
    try {
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception & e) {
        throw backend_error(std::string("unexpected chat-completion reply: ") + e.what());
    }
}

namespace {

// Pulls the ERROR_TYPE wording and PROMPT back out of a rendered instruction.
std::pair<std::string, std::string> parse_instruction(const std::string & instruction) {
    const std::string change = "\nChange the ";
    const std::string following = " in the following PROMPT:\nPROMPT: ";
    const auto a = instruction.rfind(change);
    const auto b = a == std::string::npos ? std::string::npos : instruction.find(following, a);
    if (b == std::string::npos) {
        throw backend_error("mock LLM could not parse the instruction");
    }
    return {instruction.substr(a + change.size(), b - a - change.size()), instruction.substr(b + following.size())};
}

PromptSlot slot_for(ErrorType t) {
    switch (t) {
        case ErrorType::color: return PromptSlot::color;
        case ErrorType::count: return PromptSlot::count;
        case ErrorType::background: return PromptSlot::background;
        case ErrorType::main_subject: return PromptSlot::subject;
    }
    return PromptSlot::color;
}

}  // namespace

std::string SlotSwapLlmClient::complete(const std::string & instruction, int attempt) {
    const auto [label, prompt] = parse_instruction(instruction);
    if (config_.endpoint == "mock://echo") return prompt;
    const auto swapped = ToyPromptGrammar::swap_slot(prompt, slot_for(parse_error_type(label)),
                                                     static_cast<uint64_t>(attempt));
    return swapped ? *swapped : prompt;
}

TranscriptCache::TranscriptCache(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw io_error("cannot create transcript cache '" + dir_.string() + "': " + ec.message());
}

std::string TranscriptCache::request_hash(const LlmConfig & c, const std::string & instruction, int attempt) const {
    return sha256_hex(json{{"model", c.model_tag}, {"temperature", c.temperature}, {"instruction", instruction},
                           {"attempt", attempt}}
                          .dump());
}

std::optional<TranscriptRecord> TranscriptCache::lookup(const std::string & hash) const {
    const auto path = dir_ / (hash + ".json");
    if (!fs::exists(path)) return std::nullopt;
    try {
        const auto j = json::parse(read_text_file(path));
        return TranscriptRecord{j.at("request_hash").get<std::string>(), j.at("instruction").get<std::string>(),
                                j.at("response").get<std::string>(), j.value("verdict", std::string())};
    } catch (const json::exception & e) {
        throw integrity_error("corrupt transcript record '" + path.string() + "': " + e.what());
    }
}

void TranscriptCache::store(const TranscriptRecord & r) const {
    const json j{{"request_hash", r.request_hash},
                 {"instruction", r.instruction},
                 {"response", r.response},
                 {"verdict", r.verdict}};
    write_text_file(dir_ / (r.request_hash + ".json"), j.dump(2) + "\n");
}

CachingLlmClient::CachingLlmClient(std::unique_ptr<LlmClient> inner, TranscriptCache cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::string CachingLlmClient::complete(const std::string & instruction, int attempt) {
    const auto hash = cache_.request_hash(config(), instruction, attempt);
    if (auto hit = cache_.lookup(hash)) {
        return hit->response;
    }
    if (config().offline) {
        throw transport_error("offline replay: no transcript for request " + hash);
    }
    auto response = inner_->complete(instruction, attempt);
    cache_.store({hash, instruction, response, {}});
    return response;
}

void CachingLlmClient::record_verdict(const std::string & instruction, int attempt, const Verdict & verdict) {
    const auto hash = cache_.request_hash(config(), instruction, attempt);
    if (auto rec = cache_.lookup(hash)) {
        rec->verdict = verdict.accepted ? "accepted" : "rejected: " + verdict.reason;
        cache_.store(*rec);
    }
}

std::unique_ptr<LlmClient> make_llm_client(const LlmConfig & config) {
    std::unique_ptr<LlmClient> base;
    if (config.endpoint.rfind("mock://", 0) == 0) {
        if (config.endpoint != "mock://slot-swap" && config.endpoint != "mock://echo") {
            throw config_error("unknown mock endpoint '" + config.endpoint + "'");
        }
        base = std::make_unique<SlotSwapLlmClient>(config);
    } else {
        parse_endpoint(config.endpoint);
        base = std::make_unique<HttpLlmClient>(config);
    }
    if (config.transcript_dir) {
        return std::make_unique<CachingLlmClient>(std::move(base), TranscriptCache(*config.transcript_dir));
    }
    return base;
}

std::string corrupt_prompt(LlmClient & client, ErrorType type, std::string_view prompt) {
    if (prompt.empty()) throw argument_error("cannot corrupt an empty prompt");
    const auto instruction = render_corruption_prompt(type, prompt);
    std::vector<CorruptionAttempt> transcript;
    auto * caching = dynamic_cast<CachingLlmClient *>(&client);
    for (int attempt = 0; attempt <= client.config().max_retries; ++attempt) {
        const auto response = trim(client.complete(instruction, attempt));
        const auto verdict = validate_corruption(prompt, response);
        if (caching) caching->record_verdict(instruction, attempt, verdict);
        if (verdict.accepted) return response;
        transcript.push_back({response, verdict});
    }
    throw CorruptionError("no valid '" + std::string(error_type_id(type)) + "' corruption of \"" +
                              std::string(prompt) + "\" after " + std::to_string(transcript.size()) + " attempts",
                          std::move(transcript));
}

FactualSet build_factual_set(LlmClient & client, std::string_view prompt, std::string prompt_id) {
    FactualSet set;
    set.prompt_id = std::move(prompt_id);
    set.original = std::string(prompt);
    std::vector<ErrorType> failed;
    std::string detail;
    for (auto type : kErrorTypes) {
        try {
            set.corruptions[type] = corrupt_prompt(client, type, prompt);
        } catch (const CorruptionError & e) {
            failed.push_back(type);
            detail += std::string(detail.empty() ? "" : "; ") + e.what();
        }
    }
    if (!failed.empty()) {
        std::string names;
        for (auto t : failed) names += std::string(names.empty() ? "" : ", ") + std::string(error_type_id(t));
        throw PartialSetError("incomplete factual set for \"" + std::string(prompt) + "\": failed {" + names + "}: " +
                                  detail,
                              failed);
    }
    return set;
}

std::string factual_set_to_json_line(const FactualSet & s) {
    json j{{"prompt_id", s.prompt_id}, {"original", s.original}};
    for (auto t : kErrorTypes) j[std::string(error_type_id(t))] = s.corruptions.at(t);
    return j.dump() + "\n";
}

FactualSet factual_set_from_json(const json & j) {
    FactualSet s;
    try {
        s.prompt_id = j.value("prompt_id", std::string());
        s.original = j.at("original").get<std::string>();
        for (auto t : kErrorTypes) s.corruptions[t] = j.at(std::string(error_type_id(t))).get<std::string>();
    } catch (const json::exception & e) {
        throw data_error(std::string("malformed factual set record: ") + e.what());
    }
    return s;
}

std::vector<FactualSet> load_factual_sets(const fs::path & path) {
    std::istringstream in(read_text_file(path));
    std::vector<FactualSet> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            out.push_back(factual_set_from_json(json::parse(line)));
        } catch (const json::exception & e) {
            throw data_error("malformed line in '" + path.string() + "': " + e.what());
        }
    }
    return out;
}

}  // namespace latent_align
