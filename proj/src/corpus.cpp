#include "kvlab/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kvlab/rng.hpp"
#include "kvlab/util.hpp"

namespace kvlab {

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    out.push_back(w);
  }
  return out;
}

}  // namespace

std::vector<std::string> TopicSpec::content_words() const {
  std::set<std::string> uniq;
  for (const auto& [name_, words] : slots) {
    uniq.insert(words.begin(), words.end());
  }
  return {uniq.begin(), uniq.end()};
}

void TopicSpec::validate() const {
  if (templates.empty()) {
    throw std::invalid_argument("TopicSpec '" + name + "': no templates");
  }
  if (slots.empty()) {
    throw std::invalid_argument("TopicSpec '" + name + "': no slots");
  }
  for (const auto& [slot, words] : slots) {
    if (words.empty()) {
      throw std::invalid_argument("TopicSpec '" + name + "': slot '" + slot + "' is empty");
    }
  }
  for (const auto& tpl : templates) {
    for (const auto& tok : split_words(tpl)) {
      if (tok.size() >= 2 && tok.front() == '{' && tok.back() == '}') {
        std::string slot = tok.substr(1, tok.size() - 2);
        if (!slots.count(slot)) {
          throw std::invalid_argument("TopicSpec '" + name + "': template references undeclared slot '" + slot + "'");
        }
      }
    }
  }
}

TopicSpec espresso_topic() {
  TopicSpec s;
  s.name = "espresso";
  s.seed = 11;
  s.slots = {
      {"agent", {"barista", "roaster", "machine", "grinder", "technician", "taster"}},
      {"object",
       {"espresso", "crema", "puck", "shot", "grounds", "beans", "roast", "blend", "dose", "portafilter", "basket"}},
      {"verb", {"tamps", "grinds", "brews", "extracts", "pours", "steams", "pulls", "doses", "rinses", "weighs"}},
      {"property", {"bitter", "sour", "balanced", "syrupy", "aromatic", "stale", "watery", "sweet"}},
      {"factor", {"pressure", "temperature", "yield", "ratio", "flow", "fineness", "channeling", "tamping"}},
  };
  s.templates = {
      "the {agent} {verb} the {object}",
      "a {property} {object} is very {property}",
      "the {factor} of the {object} is {property}",
      "when the {object} is {property} the {agent} {verb} the {object}",
      "the {agent} {verb} the {object} with {factor}",
      "every {object} is {property} under {factor}",
      "the {agent} {verb} the {object} and the {object}",
      "its {factor} is {property} while the {agent} {verb} the {object}",
      "the {agent} {verb} the {object} into the {object}",
  };
  return s;
}

TopicSpec stellar_topic() {
  TopicSpec s;
  s.name = "stellar";
  s.seed = 12;
  s.slots = {
      {"body",
       {"star", "nebula", "supernova", "dwarf", "giant", "pulsar", "protostar", "remnant", "cluster", "core",
        "blackhole"}},
      {"verb",
       {"collapses", "ignites", "expands", "fuses", "radiates", "dims", "explodes", "cools", "contracts", "spins"}},
      {"material", {"hydrogen", "helium", "plasma", "dust", "iron", "carbon", "gas"}},
      {"property", {"massive", "dense", "luminous", "ancient", "faint", "unstable", "compact", "hot"}},
      {"force", {"gravity", "fusion", "radiation", "luminosity", "mass", "spin"}},
  };
  s.templates = {
      "the {body} {verb} into a {body}",
      "a {property} {body} is very {property}",
      "the {force} of the {body} is {property}",
      "when the {body} is {property} the {body} {verb}",
      "the {body} {verb} with {force}",
      "every {body} is {property} under {force}",
      "the {body} {verb} and the {body} {verb}",
      "its {force} is {property} while the {body} {verb}",
      "the {body} {verb} {material} into {material}",
  };
  return s;
}

std::vector<std::string> generate_corpus(const TopicSpec& spec, int n_sentences) {
  if (n_sentences < 1) {
    throw std::invalid_argument("generate_corpus: n_sentences must be >= 1");
  }
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(n_sentences));
  for (int i = 0; i < n_sentences; ++i) {
    const std::string& tpl = spec.templates[static_cast<size_t>(rng.next_int(static_cast<int>(spec.templates.size())))];
    std::string sentence;
    for (const auto& tok : split_words(tpl)) {
      std::string word = tok;
      if (tok.size() >= 2 && tok.front() == '{' && tok.back() == '}') {
        const auto& choices = spec.slots.at(tok.substr(1, tok.size() - 2));
        word = choices[static_cast<size_t>(rng.next_int(static_cast<int>(choices.size())))];
      }
      if (!sentence.empty()) sentence += ' ';
      sentence += word;
    }
    out.push_back(std::move(sentence));
  }
  return out;
}

int Vocab::id_of(const std::string& w) const {
  auto it = word_to_id.find(w);
  return it == word_to_id.end() ? kUnkId : it->second;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpora) {
  std::set<std::string> uniq;
  for (const auto& corpus : corpora) {
    for (const auto& line : corpus) {
      for (const auto& w : split_words(line)) {
        uniq.insert(w);
      }
    }
  }
  Vocab v;
  v.id_to_word = {"<eos>", "<unk>"};
  v.id_to_word.insert(v.id_to_word.end(), uniq.begin(), uniq.end());
  for (size_t i = 0; i < v.id_to_word.size(); ++i) {
    v.word_to_id[v.id_to_word[i]] = static_cast<int>(i);
  }
  return v;
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> out;
  for (const auto& w : split_words(text)) {
    out.push_back(vocab.id_of(w));
  }
  return out;
}

std::vector<int> tokenize_corpus(const std::vector<std::string>& lines, const Vocab& vocab) {
  std::vector<int> out;
  for (const auto& line : lines) {
    auto ids = tokenize(line, vocab);
    out.insert(out.end(), ids.begin(), ids.end());
    out.push_back(kEosId);
  }
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) {
      throw std::out_of_range("detokenize: id " + std::to_string(id) + " outside vocabulary");
    }
    if (!out.empty()) out += ' ';
    out += vocab.id_to_word[static_cast<size_t>(id)];
  }
  return out;
}

double content_word_overlap(const TopicSpec& a, const TopicSpec& b) {
  auto wa = a.content_words();
  auto wb = b.content_words();
  std::set<std::string> sa(wa.begin(), wa.end());
  std::set<std::string> sb(wb.begin(), wb.end());
  size_t inter = 0;
  for (const auto& w : sa) {
    if (sb.count(w)) ++inter;
  }
  size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void save_topic_spec(const std::filesystem::path& path, const TopicSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["seed"] = spec.seed;
  j["slots"] = spec.slots;
  j["templates"] = spec.templates;
  write_file(path, j.dump(2) + "\n");
}

TopicSpec load_topic_spec(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path));
  TopicSpec s;
  s.name = j.at("name").get<std::string>();
  s.seed = j.at("seed").get<uint64_t>();
  s.slots = j.at("slots").get<std::map<std::string, std::vector<std::string>>>();
  s.templates = j.at("templates").get<std::vector<std::string>>();
  s.validate();
  return s;
}

}  // namespace kvlab
