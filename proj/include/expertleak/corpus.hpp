#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "expertleak/moe.hpp"
#include "expertleak/rng.hpp"

namespace expertleak::corpus {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PromptTemplate {
    std::string id;
    std::string text; // contains slot markers such as [Illness]
    enum class Length { Short, Long } length = Length::Short;
};

/// The slot markers every template must contain at least once.
const std::vector<std::string>& slot_markers();

std::vector<PromptTemplate> parse_templates(std::istream& in);
std::vector<PromptTemplate> load_templates(const std::string& path);

/// Attribute surface-string pools. Cardinalities: 8 age decades, 2 genders,
/// 8 blood types, 116 illnesses, 8 insurers, 16 billing amounts.
const std::vector<std::string>& gender_names();
const std::vector<std::string>& blood_type_names();
const std::vector<std::string>& illness_names();
const std::vector<std::string>& insurance_names();
const std::vector<std::string>& billing_names();

struct HealthRecord {
    int age = 20;       // 20..99
    int age_group = 0;  // decade bin, 0..7
    int gender = 0;     // 0..1
    int blood_type = 0; // 0..7
    int illness = 0;    // 0..115
    int insurance = 0;  // 0..7
    int billing = 0;    // 0..15
};

HealthRecord sample_record(Rng& rng);
std::string fill_template(const PromptTemplate& t, const HealthRecord& r);

/// Clause-shuffled variant with filler clauses, standing in for free-form
/// restatements of the same record.
std::string scramble_prompt(const std::string& filled, Rng& rng);

/// Word ids: 0 is the padding/unknown sentinel, known words occupy 1..n,
/// out-of-vocabulary words hash into `oov_buckets` ids after the known range.
class Vocabulary {
  public:
    explicit Vocabulary(int oov_buckets = 4096) : oov_buckets_(oov_buckets) {}

    int add(const std::string& word); // idempotent, returns id
    int lookup(const std::string& word) const;
    bool contains(const std::string& word) const;
    const std::string& word(int id) const; // known ids only
    int known_count() const { return static_cast<int>(words_.size()); }
    int oov_buckets() const { return oov_buckets_; }
    /// One past the largest id this vocabulary can emit.
    int id_bound() const { return known_count() + 1 + oov_buckets_; }

    void merge(const Vocabulary& other); // union of known words

  private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> words_;
    int oov_buckets_;
};

std::vector<std::string> split_words(const std::string& text);
moe::TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

struct LabeledPrompt {
    moe::TokenSequence ids;
    HealthRecord record;
    std::string template_id;
};

std::vector<LabeledPrompt> build_pia_dataset(int n,
                                             const std::vector<PromptTemplate>& templates,
                                             const Vocabulary& vocab,
                                             std::uint64_t seed,
                                             bool unstructured = false);

struct RraPair {
    moe::TokenSequence prompt;
    moe::TokenSequence response;
};

struct RraCorpus {
    std::vector<RraPair> pairs;
    Vocabulary vocab;
};

/// Synthetic near-deterministic domain text; domains: general, medical,
/// financial. Sentences carry a comma after the opening clause.
std::vector<std::string> synth_domain_sentences(const std::string& domain,
                                                int count, std::uint64_t seed);

/// Splits each sentence at its first comma into (prompt, response) and
/// builds a vocabulary over the corpus. Pairs with empty responses dropped.
RraCorpus build_rra_corpus(const std::vector<std::string>& texts,
                           std::uint64_t seed, int oov_buckets = 64);

void write_pia_dataset(const std::string& path,
                       const std::vector<LabeledPrompt>& data);
std::vector<LabeledPrompt> read_pia_dataset(const std::string& path);

void write_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::string& path, int oov_buckets = 4096);

} // namespace expertleak::corpus
