#include "kvlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "kvlab/util.hpp"

namespace kvlab {

namespace {

constexpr char kMagic[8] = {'K', 'V', 'L', 'M', 'C', 'K', 'P', '1'};

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_pod(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

void put_string(std::string& buf, const std::string& s) {
  put_pod<uint32_t>(buf, static_cast<uint32_t>(s.size()));
  put_bytes(buf, s.data(), s.size());
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  void get_bytes(void* p, size_t n) {
    if (pos_ + n > data_.size()) {
      throw std::runtime_error("checkpoint: truncated file");
    }
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T get_pod() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }

  std::string get_string() {
    auto n = get_pod<uint32_t>();
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }

  size_t pos() const { return pos_; }
  const std::string& data() const { return data_; }

 private:
  std::string data_;
  size_t pos_ = 0;
};

}  // namespace

void save_model(const std::filesystem::path& path, const Model& m, const Vocab* vocab) {
  std::string buf;
  put_bytes(buf, kMagic, sizeof(kMagic));
  const ModelConfig& c = m.cfg;
  put_pod<int32_t>(buf, c.n_layers);
  put_pod<int32_t>(buf, c.n_heads);
  put_pod<int32_t>(buf, c.d_model);
  put_pod<int32_t>(buf, c.head_dim);
  put_pod<int32_t>(buf, c.vocab_size);
  put_pod<int32_t>(buf, c.max_seq);
  put_pod<int32_t>(buf, c.mlp_hidden);
  put_pod<double>(buf, c.rope_base);
  put_pod<uint8_t>(buf, static_cast<uint8_t>(c.pos_encoding));
  put_pod<uint64_t>(buf, c.seed);

  put_pod<uint8_t>(buf, vocab != nullptr ? 1 : 0);
  if (vocab != nullptr) {
    put_pod<uint32_t>(buf, static_cast<uint32_t>(vocab->id_to_word.size()));
    for (const auto& w : vocab->id_to_word) {
      put_string(buf, w);
    }
  }

  auto params = m.params();
  put_pod<uint32_t>(buf, static_cast<uint32_t>(params.size()));
  for (const Tensor2D* p : params) {
    put_pod<uint32_t>(buf, static_cast<uint32_t>(p->rows));
    put_pod<uint32_t>(buf, static_cast<uint32_t>(p->cols));
    put_bytes(buf, p->data.data(), p->data.size() * sizeof(double));
  }

  put_pod<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
  write_file_atomic(path, buf);
}

LoadedModel load_model(const std::filesystem::path& path) {
  Reader r(read_file(path));
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }

  ModelConfig c;
  c.n_layers = r.get_pod<int32_t>();
  c.n_heads = r.get_pod<int32_t>();
  c.d_model = r.get_pod<int32_t>();
  c.head_dim = r.get_pod<int32_t>();
  c.vocab_size = r.get_pod<int32_t>();
  c.max_seq = r.get_pod<int32_t>();
  c.mlp_hidden = r.get_pod<int32_t>();
  c.rope_base = r.get_pod<double>();
  c.pos_encoding = static_cast<PosEncoding>(r.get_pod<uint8_t>());
  c.seed = r.get_pod<uint64_t>();

  LoadedModel out;
  if (r.get_pod<uint8_t>() != 0) {
    Vocab v;
    auto n = r.get_pod<uint32_t>();
    v.id_to_word.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
      v.id_to_word.push_back(r.get_string());
    }
    for (size_t i = 0; i < v.id_to_word.size(); ++i) {
      v.word_to_id[v.id_to_word[i]] = static_cast<int>(i);
    }
    out.vocab = std::move(v);
  }

  // Build an identically shaped model, then overwrite every parameter.
  out.model = init_model(c);
  auto params = out.model.params();
  auto n_params = r.get_pod<uint32_t>();
  if (n_params != params.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (Tensor2D* p : params) {
    auto rows = r.get_pod<uint32_t>();
    auto cols = r.get_pod<uint32_t>();
    if (static_cast<int>(rows) != p->rows || static_cast<int>(cols) != p->cols) {
      throw std::runtime_error("checkpoint: parameter shape mismatch");
    }
    r.get_bytes(p->data.data(), p->data.size() * sizeof(double));
  }

  size_t payload = r.pos();
  auto stored = r.get_pod<uint64_t>();
  if (stored != fnv1a64(r.data().data(), payload)) {
    throw std::runtime_error("checkpoint: checksum mismatch in " + path.string());
  }
  return out;
}

}  // namespace kvlab
