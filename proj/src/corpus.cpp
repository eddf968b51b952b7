#include "expertleak/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace expertleak::corpus {

const std::vector<std::string>& slot_markers() {
    static const std::vector<std::string> markers = {
        "[Age]", "[Gender]", "[Blood Type]", "[Illness]", "[Insurance]",
        "[Billing Amount]"};
    return markers;
}

std::vector<PromptTemplate> parse_templates(std::istream& in) {
    std::vector<PromptTemplate> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        PromptTemplate t;
        std::string cls;
        if (!std::getline(ls, t.id, '\t') || !std::getline(ls, cls, '\t') ||
            !std::getline(ls, t.text))
            throw ParseError("templates line " + std::to_string(lineno) +
                             ": expected id<TAB>class<TAB>text");
        if (cls == "short") t.length = PromptTemplate::Length::Short;
        else if (cls == "long") t.length = PromptTemplate::Length::Long;
        else throw ParseError("template " + t.id + ": unknown length class " + cls);
        for (const auto& marker : slot_markers())
            if (t.text.find(marker) == std::string::npos)
                throw ParseError("template " + t.id + ": missing slot " + marker);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<PromptTemplate> load_templates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open template file: " + path);
    return parse_templates(in);
}

const std::vector<std::string>& gender_names() {
    static const std::vector<std::string> v = {"male", "female"};
    return v;
}

const std::vector<std::string>& blood_type_names() {
    static const std::vector<std::string> v = {
        "a positive",  "a negative",  "b positive", "b negative",
        "ab positive", "ab negative", "o positive", "o negative"};
    return v;
}

const std::vector<std::string>& illness_names() {
    static const std::vector<std::string> v = [] {
        // 116 distinct two-word names from a 12 x 10 grid, first 116 kept.
        const char* adj[12] = {"acute",     "chronic",  "viral",   "bacterial",
                               "fungal",    "genetic",  "seasonal", "severe",
                               "mild",      "recurrent", "latent",  "atypical"};
        const char* noun[10] = {"anemia",     "arthritis",  "asthma",
                                "bronchitis", "dermatitis", "migraine",
                                "neuropathy", "gastritis",  "hepatitis",
                                "hypertension"};
        std::vector<std::string> names;
        for (int i = 0; i < 116; ++i)
            names.push_back(std::string(adj[i / 10]) + " " + noun[i % 10]);
        return names;
    }();
    return v;
}

const std::vector<std::string>& insurance_names() {
    static const std::vector<std::string> v = {
        "northwind health group",   "lakeside mutual care",
        "summit care alliance",     "harborview medical plan",
        "pinnacle assurance trust", "meridian benefits network",
        "crestline coverage group", "silverpeak health partners"};
    return v;
}

const std::vector<std::string>& billing_names() {
    static const std::vector<std::string> v = [] {
        std::vector<std::string> names;
        for (int i = 1; i <= 16; ++i)
            names.push_back(std::to_string(i * 100) + " dollars");
        return names;
    }();
    return v;
}

HealthRecord sample_record(Rng& rng) {
    HealthRecord r;
    r.age = 20 + static_cast<int>(rng.uniform_int(80)); // 20..99
    r.age_group = (r.age - 20) / 10;
    r.gender = static_cast<int>(rng.uniform_int(2));
    r.blood_type = static_cast<int>(rng.uniform_int(8));
    r.illness = static_cast<int>(rng.uniform_int(116));
    r.insurance = static_cast<int>(rng.uniform_int(8));
    r.billing = static_cast<int>(rng.uniform_int(16));
    return r;
}

namespace {

void replace_all(std::string& text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
}

} // namespace

std::string fill_template(const PromptTemplate& t, const HealthRecord& r) {
    std::string text = t.text;
    replace_all(text, "[Age]", std::to_string(r.age));
    replace_all(text, "[Gender]", gender_names().at(r.gender));
    replace_all(text, "[Blood Type]", blood_type_names().at(r.blood_type));
    replace_all(text, "[Illness]", illness_names().at(r.illness));
    replace_all(text, "[Insurance]", insurance_names().at(r.insurance));
    replace_all(text, "[Billing Amount]", billing_names().at(r.billing));
    return text;
}

std::string scramble_prompt(const std::string& filled, Rng& rng) {
    static const std::vector<std::string> fillers = {
        "thanks in advance for taking a look",
        "please keep the explanation practical",
        "this came up during a routine review",
        "any pointers to further reading are welcome",
        "we would like to settle this soon"};

    // Split into clauses on sentence-ending punctuation.
    std::vector<std::string> clauses;
    std::string cur;
    for (char c : filled) {
        if (c == '.' || c == '?' || c == '!') {
            if (!cur.empty()) clauses.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) clauses.push_back(cur);

    int extra = 1 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < extra; ++i)
        clauses.push_back(fillers[rng.uniform_int(fillers.size())]);

    // Fisher-Yates shuffle with the supplied stream.
    for (std::size_t i = clauses.size(); i > 1; --i)
        std::swap(clauses[i - 1], clauses[rng.uniform_int(i)]);

    std::string out;
    for (const auto& c : clauses) {
        std::size_t start = c.find_first_not_of(' ');
        if (start == std::string::npos) continue;
        if (!out.empty()) out += ". ";
        out += c.substr(start);
    }
    out += ".";
    return out;
}

int Vocabulary::add(const std::string& word) {
    auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    words_.push_back(word);
    int id = static_cast<int>(words_.size()); // ids start at 1
    ids_.emplace(word, id);
    return id;
}

bool Vocabulary::contains(const std::string& word) const {
    return ids_.count(word) != 0;
}

int Vocabulary::lookup(const std::string& word) const {
    auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    if (oov_buckets_ <= 0) return 0;
    std::uint64_t h = 0x9AE16A3B2F90404FULL;
    for (char c : word) h = splitmix64(h ^ static_cast<unsigned char>(c));
    return known_count() + 1 + static_cast<int>(h % oov_buckets_);
}

const std::string& Vocabulary::word(int id) const {
    if (id < 1 || id > known_count())
        throw ParseError("vocabulary id out of known range: " + std::to_string(id));
    return words_[id - 1];
}

void Vocabulary::merge(const Vocabulary& other) {
    for (const auto& w : other.words_) add(w);
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

moe::TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
    moe::TokenSequence ids;
    for (const auto& w : split_words(text)) ids.push_back(vocab.lookup(w));
    return ids;
}

std::vector<LabeledPrompt> build_pia_dataset(int n,
                                             const std::vector<PromptTemplate>& templates,
                                             const Vocabulary& vocab,
                                             std::uint64_t seed,
                                             bool unstructured) {
    if (n < 1) throw ParseError("build_pia_dataset: n must be >= 1");
    if (templates.empty()) throw ParseError("build_pia_dataset: empty template subset");
    std::vector<LabeledPrompt> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
        LabeledPrompt p;
        p.record = sample_record(rng);
        const auto& t = templates[rng.uniform_int(templates.size())];
        p.template_id = t.id;
        std::string text = fill_template(t, p.record);
        if (unstructured) text = scramble_prompt(text, rng);
        p.ids = tokenize(text, vocab);
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

// Deterministic pronounceable word from two or three syllables.
std::string synth_word(std::uint64_t h) {
    static const char* syl[16] = {"ba", "re", "mo", "ta", "lin", "ver",
                                  "so", "ke", "dal", "fir", "nu",  "pex",
                                  "ral", "ste", "ton", "gri"};
    std::string w = syl[h & 15];
    w += syl[(h >> 4) & 15];
    if ((h >> 8) & 1) w += syl[(h >> 9) & 15];
    w += static_cast<char>('a' + ((h >> 13) % 26));
    return w;
}

std::vector<std::string> domain_lexicon(const std::string& domain, int size) {
    // One third of every domain's words come from a shared pool so that
    // cross-domain models transfer partially.
    std::uint64_t domain_seed = 0xD0A11ULL;
    for (char c : domain) domain_seed = splitmix64(domain_seed ^ static_cast<unsigned char>(c));
    std::vector<std::string> words;
    std::uint64_t h = 0;
    int shared = size / 3;
    while (static_cast<int>(words.size()) < shared) {
        h = splitmix64(h + 0x5EEDULL);
        std::string w = synth_word(h);
        if (std::find(words.begin(), words.end(), w) == words.end())
            words.push_back(w);
    }
    h = domain_seed;
    while (static_cast<int>(words.size()) < size) {
        h = splitmix64(h + 1);
        std::string w = synth_word(h);
        if (std::find(words.begin(), words.end(), w) == words.end())
            words.push_back(w);
    }
    return words;
}

} // namespace

std::vector<std::string> synth_domain_sentences(const std::string& domain,
                                                int count, std::uint64_t seed) {
    const int W = 400;
    const double branch = 0.035;
    auto lex = domain_lexicon(domain, W);

    std::uint64_t domain_seed = seed;
    for (char c : domain) domain_seed = splitmix64(domain_seed ^ static_cast<unsigned char>(c));
    Rng chain(domain_seed);
    std::vector<int> succ(W), alt(W);
    for (int i = 0; i < W; ++i) succ[i] = static_cast<int>(chain.uniform_int(W));
    for (int i = 0; i < W; ++i) alt[i] = static_cast<int>(chain.uniform_int(W));

    std::vector<std::string> sentences;
    sentences.reserve(count);
    for (int s = 0; s < count; ++s) {
        Rng rng = Rng::derive(domain_seed, static_cast<std::uint64_t>(s));
        int w = static_cast<int>(rng.uniform_int(W));
        int len = 15 + static_cast<int>(rng.uniform_int(15));
        int clause_end = 4 + static_cast<int>(rng.uniform_int(4));
        std::string sent = lex[w];
        for (int t = 1; t < len; ++t) {
            w = rng.bernoulli(branch) ? alt[w] : succ[w];
            if (t == clause_end) sent += ",";
            sent += " " + lex[w];
        }
        sent += ".";
        sentences.push_back(std::move(sent));
    }
    return sentences;
}

RraCorpus build_rra_corpus(const std::vector<std::string>& texts,
                           std::uint64_t seed, int oov_buckets) {
    if (texts.empty()) throw ParseError("build_rra_corpus: empty text list");
    (void)seed; // splitting is deterministic; kept for interface stability
    RraCorpus corpus{{}, Vocabulary(oov_buckets)};
    for (const auto& text : texts) {
        std::size_t comma = text.find(',');
        std::string head, tail;
        if (comma == std::string::npos) {
            // No clause boundary: first third of the words become the prompt.
            auto words = split_words(text);
            std::size_t cut = std::max<std::size_t>(1, words.size() / 3);
            for (std::size_t i = 0; i < words.size(); ++i)
                (i < cut ? head : tail) += words[i] + " ";
        } else {
            head = text.substr(0, comma);
            tail = text.substr(comma + 1);
        }
        for (const auto& w : split_words(head)) corpus.vocab.add(w);
        for (const auto& w : split_words(tail)) corpus.vocab.add(w);
        RraPair pair;
        pair.prompt = tokenize(head, corpus.vocab);
        pair.response = tokenize(tail, corpus.vocab);
        if (pair.prompt.empty() || pair.response.empty()) continue;
        corpus.pairs.push_back(std::move(pair));
    }
    if (corpus.vocab.known_count() > 2000)
        throw ParseError("build_rra_corpus: vocabulary exceeds the 2000-word cap");
    return corpus;
}

void write_pia_dataset(const std::string& path,
                       const std::vector<LabeledPrompt>& data) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write dataset file: " + path);
    for (const auto& p : data) {
        out << p.template_id << '\t' << p.record.age << '\t' << p.record.gender
            << '\t' << p.record.blood_type << '\t' << p.record.illness << '\t';
        for (std::size_t i = 0; i < p.ids.size(); ++i) {
            if (i) out << ' ';
            out << p.ids[i];
        }
        out << '\n';
    }
}

std::vector<LabeledPrompt> read_pia_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);
    std::vector<LabeledPrompt> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        LabeledPrompt p;
        std::string ids;
        if (!std::getline(ls, p.template_id, '\t'))
            throw ParseError("dataset line " + std::to_string(lineno) + ": bad row");
        ls >> p.record.age;
        ls.ignore(1);
        ls >> p.record.gender;
        ls.ignore(1);
        ls >> p.record.blood_type;
        ls.ignore(1);
        ls >> p.record.illness;
        ls.ignore(1);
        std::getline(ls, ids);
        p.record.age_group = (p.record.age - 20) / 10;
        std::istringstream is(ids);
        int id;
        while (is >> id) p.ids.push_back(id);
        if (p.ids.empty())
            throw ParseError("dataset line " + std::to_string(lineno) + ": no tokens");
        out.push_back(std::move(p));
    }
    return out;
}

void write_vocab(const std::string& path, const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write vocabulary file: " + path);
    for (int id = 1; id <= vocab.known_count(); ++id)
        out << vocab.word(id) << '\t' << id << '\n';
}

Vocabulary read_vocab(const std::string& path, int oov_buckets) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open vocabulary file: " + path);
    Vocabulary vocab(oov_buckets);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("vocab line " + std::to_string(lineno) + ": no tab");
        int id = vocab.add(line.substr(0, tab));
        int expect = std::stoi(line.substr(tab + 1));
        if (id != expect)
            throw ParseError("vocab line " + std::to_string(lineno) +
                             ": ids must be dense and in order");
    }
    return vocab;
}

} // namespace expertleak::corpus
