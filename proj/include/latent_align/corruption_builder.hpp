#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latent_align/error.hpp"

namespace latent_align {

enum class ErrorType { color, count, background, main_subject };

inline constexpr std::array<ErrorType, 4> kErrorTypes{ErrorType::color, ErrorType::count, ErrorType::background,
                                                      ErrorType::main_subject};

// Identifier used in records and configs: color, count, background, main_subject.
std::string_view error_type_id(ErrorType type);
// Wording substituted into the instruction: color, count, background, main subject.
std::string_view error_type_label(ErrorType type);
ErrorType parse_error_type(std::string_view id);

// The rewrite instruction with {ERROR_TYPE} and {PROMPT} placeholders.
std::string_view corruption_template();

// Substitutes the placeholders once, left to right; braces inside the prompt are copied literally.
std::string render_corruption_prompt(ErrorType type, std::string_view prompt);

struct Verdict {
    bool accepted = false;
    std::string reason;  // empty when accepted
};

// Rejects unchanged (case-insensitive), empty, multi-line, or length ratio outside [0.5, 2.0].
Verdict validate_corruption(std::string_view original, std::string_view candidate);

struct LlmConfig {
    std::string endpoint;  // chat-completions URL, or "mock://slot-swap" / "mock://echo"
    std::string model_tag = "gemma-3-27b-it";
    double temperature = 0.7;
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    std::string api_key_env = "LATENT_ALIGN_LLM_API_KEY";
    std::optional<std::filesystem::path> transcript_dir;
    bool offline = false;  // replay only: cache misses fail instead of calling the endpoint
};

nlohmann::json llm_config_to_json(const LlmConfig & config);
LlmConfig llm_config_from_json(const nlohmann::json & j);

// One completion per call; `attempt` distinguishes retries so each is cached separately.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::string & instruction, int attempt) = 0;
    virtual const LlmConfig & config() const = 0;
};

// OpenAI-style chat completion over HTTP: {"model", "temperature", "messages": [{"role": "user", ...}]}.
class HttpLlmClient final : public LlmClient {
public:
    explicit HttpLlmClient(LlmConfig config) : config_(std::move(config)) {}
    std::string complete(const std::string & instruction, int attempt) override;
    const LlmConfig & config() const override { return config_; }

private:
    LlmConfig config_;
};

// Offline stand-in that edits the toy prompt grammar's slot for the requested ERROR_TYPE.
class SlotSwapLlmClient final : public LlmClient {
public:
    explicit SlotSwapLlmClient(LlmConfig config) : config_(std::move(config)) {}
    std::string complete(const std::string & instruction, int attempt) override;
    const LlmConfig & config() const override { return config_; }

private:
    LlmConfig config_;
};

struct TranscriptRecord {
    std::string request_hash;
    std::string instruction;
    std::string response;
    std::string verdict;  // "accepted", "rejected: <reason>", or empty when not yet judged
};

// Record/replay cache: one JSON file per request, named by the request hash.
class TranscriptCache {
public:
    explicit TranscriptCache(std::filesystem::path dir);

    std::string request_hash(const LlmConfig & config, const std::string & instruction, int attempt) const;
    std::optional<TranscriptRecord> lookup(const std::string & hash) const;
    void store(const TranscriptRecord & record) const;
    const std::filesystem::path & dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

// Wraps a client with the transcript cache. Cache hits never touch the inner client.
class CachingLlmClient final : public LlmClient {
public:
    CachingLlmClient(std::unique_ptr<LlmClient> inner, TranscriptCache cache);
    std::string complete(const std::string & instruction, int attempt) override;
    const LlmConfig & config() const override { return inner_->config(); }
    void record_verdict(const std::string & instruction, int attempt, const Verdict & verdict);

private:
    std::unique_ptr<LlmClient> inner_;
    TranscriptCache cache_;
};

std::unique_ptr<LlmClient> make_llm_client(const LlmConfig & config);

struct CorruptionAttempt {
    std::string response;
    Verdict verdict;
};

class CorruptionError : public Error {
public:
    CorruptionError(const std::string & what, std::vector<CorruptionAttempt> transcript)
        : Error(ErrorKind::backend, what), transcript_(std::move(transcript)) {}
    const std::vector<CorruptionAttempt> & transcript() const { return transcript_; }

private:
    std::vector<CorruptionAttempt> transcript_;
};

// Up to 1 + max_retries attempts; the response is trimmed of surrounding whitespace before validation.
std::string corrupt_prompt(LlmClient & client, ErrorType type, std::string_view prompt);

struct FactualSet {
    std::string prompt_id;
    std::string original;
    std::map<ErrorType, std::string> corruptions;

    bool operator==(const FactualSet &) const = default;
};

class PartialSetError : public Error {
public:
    PartialSetError(const std::string & what, std::vector<ErrorType> failed)
        : Error(ErrorKind::backend, what), failed_(std::move(failed)) {}
    const std::vector<ErrorType> & failed() const { return failed_; }

private:
    std::vector<ErrorType> failed_;
};

FactualSet build_factual_set(LlmClient & client, std::string_view prompt, std::string prompt_id = {});

std::string factual_set_to_json_line(const FactualSet & set);
FactualSet factual_set_from_json(const nlohmann::json & j);
std::vector<FactualSet> load_factual_sets(const std::filesystem::path & path);

}  // namespace latent_align
