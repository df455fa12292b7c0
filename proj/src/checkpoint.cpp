// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "zq/error.hpp"

namespace zq {

namespace {

constexpr char kMagic[4] = {'Z', 'Q', 'C', 'K'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void size(std::size_t v) {
    if (v > UINT32_MAX) throw UsageError("checkpoint field exceeds 32 bits");
    u32(static_cast<std::uint32_t>(v));
  }

  void tensor(const Tensor& t) {
    size(t.rank());
    for (std::size_t d : t.shape()) size(d);
    for (float v : t.data()) f32(v);
  }

  void quantized(const QuantizedMatrix& q) {
    size(q.rows);
    size(q.cols);
    u8(static_cast<std::uint8_t>(q.bits));
    size(q.num_groups());
    for (const GroupSpan& g : q.group_layout) {
      size(g.start);
      size(g.count);
    }
    for (float s : q.group_scales) f32(s);
    for (std::int8_t v : q.values) u8(static_cast<std::uint8_t>(v));
  }

  void linear(const LinearWeight& w) {
    if (const auto* q = std::get_if<QuantizedMatrix>(&w)) {
      u8(1);
      quantized(*q);
    } else {
      u8(0);
      tensor(std::get<Tensor>(w));
    }
  }

  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf_(b) {}

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) fail("bad tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u32();
      if (d == 0) fail("zero tensor dimension");
      n *= d;
    }
    need(n * 4);
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = f32();
    return t;
  }

  QuantizedMatrix quantized() {
    QuantizedMatrix q;
    q.rows = u32();
    q.cols = u32();
    q.bits = u8();
    const std::uint32_t groups = u32();
    if (groups == 0 || groups > q.rows) fail("bad group count");
    need(static_cast<std::size_t>(groups) * 12);
    q.group_layout.resize(groups);
    for (auto& g : q.group_layout) {
      g.start = u32();
      g.count = u32();
    }
    q.group_scales.resize(groups);
    for (float& s : q.group_scales) s = f32();
    need(q.rows * q.cols);
    q.values.resize(q.rows * q.cols);
    for (auto& v : q.values) v = static_cast<std::int8_t>(u8());
    try {
      q.validate();
    } catch (const Error& e) {
      fail(std::string("invalid quantized matrix: ") + e.what());
    }
    return q;
  }

  LinearWeight linear() {
    const std::uint8_t kind = u8();
    if (kind == 0) return tensor();
    if (kind == 1) return quantized();
    fail("bad weight kind");
  }

  void expect_end() const {
    if (pos_ != buf_.size()) fail("trailing bytes");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError("checkpoint: " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated");
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

template <typename Enum>
Enum read_enum(Reader& r, std::uint8_t limit) {
  const std::uint8_t v = r.u8();
  if (v > limit) r.fail("bad enum value");
  return static_cast<Enum>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  const ToyModel& m = c.model;
  m.validate();
  Writer w;
  for (char ch : kMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u32(kCheckpointVersion);
  w.size(m.vocab());
  w.size(m.dim());
  w.size(m.num_heads());
  w.size(m.num_layers());
  w.u8(m.causal ? 1 : 0);
  w.u8(c.precision ? 1 : 0);
  if (c.precision) {
    w.u8(static_cast<std::uint8_t>(c.precision->mhsa_weights));
    w.u8(static_cast<std::uint8_t>(c.precision->ffc_weights));
    w.u8(static_cast<std::uint8_t>(c.precision->activations));
    w.u8(c.precision->activation_static ? 1 : 0);
    w.size(c.precision->group_count);
  }
  w.tensor(m.embedding);
  w.tensor(m.final_ln_gamma);
  w.tensor(m.final_ln_beta);
  for (const Block& b : m.blocks) {
    if (const auto* fb = std::get_if<BlockWeights>(&b)) {
      w.u8(0);
      for (const Tensor* t : {&fb->w_q, &fb->w_k, &fb->w_v, &fb->w_o, &fb->w_h4h, &fb->w_4hh, &fb->b_q, &fb->b_k,
                              &fb->b_v, &fb->b_o, &fb->b_h4h, &fb->b_4hh, &fb->ln1_gamma, &fb->ln1_beta,
                              &fb->ln2_gamma, &fb->ln2_beta}) {
        w.tensor(*t);
      }
    } else {
      const auto& qb = std::get<QuantizedBlock>(b);
      w.u8(1);
      for (const LinearWeight* lw : {&qb.w_q, &qb.w_k, &qb.w_v, &qb.w_o, &qb.w_h4h, &qb.w_4hh}) w.linear(*lw);
      for (const Tensor* t : {&qb.b_q, &qb.b_k, &qb.b_v, &qb.b_o, &qb.b_h4h, &qb.b_4hh, &qb.ln1_gamma, &qb.ln1_beta,
                              &qb.ln2_gamma, &qb.ln2_beta}) {
        w.tensor(*t);
      }
      w.u8(qb.static_scales ? 1 : 0);
      if (qb.static_scales)
        for (float s : *qb.static_scales) w.f32(s);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  for (char ch : kMagic) {
    if (r.u8() != static_cast<std::uint8_t>(ch)) r.fail("bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw InputError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  ToyModel& m = c.model;
  const std::uint32_t vocab = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint32_t heads = r.u32();
  const std::uint32_t layers = r.u32();
  const std::uint8_t causal = r.u8();
  if (causal > 1) r.fail("bad causal flag");
  m.causal = causal == 1;
  const std::uint8_t has_precision = r.u8();
  if (has_precision > 1) r.fail("bad precision flag");
  if (has_precision) {
    PrecisionConfig p;
    p.mhsa_weights = read_enum<WeightPrecision>(r, 2);
    p.ffc_weights = read_enum<WeightPrecision>(r, 2);
    p.activations = read_enum<ActivationScheme>(r, 2);
    const std::uint8_t st = r.u8();
    if (st > 1) r.fail("bad static flag");
    p.activation_static = st == 1;
    p.group_count = r.u32();
    c.precision = p;
  }
  m.embedding = r.tensor();
  m.final_ln_gamma = r.tensor();
  m.final_ln_beta = r.tensor();
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint8_t kind = r.u8();
    if (kind == 0) {
      BlockWeights b;
      for (Tensor* t : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_h4h, &b.w_4hh, &b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.b_h4h,
                        &b.b_4hh, &b.ln1_gamma, &b.ln1_beta, &b.ln2_gamma, &b.ln2_beta}) {
        *t = r.tensor();
      }
      b.num_heads = heads;
      m.blocks.emplace_back(std::move(b));
    } else if (kind == 1) {
      QuantizedBlock b;
      for (LinearWeight* lw : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_h4h, &b.w_4hh}) *lw = r.linear();
      for (Tensor* t : {&b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.b_h4h, &b.b_4hh, &b.ln1_gamma, &b.ln1_beta, &b.ln2_gamma,
                        &b.ln2_beta}) {
        *t = r.tensor();
      }
      const std::uint8_t has_scales = r.u8();
      if (has_scales > 1) r.fail("bad static scale flag");
      if (has_scales) {
        SiteScales s{};
        for (float& v : s) v = r.f32();
        b.static_scales = s;
      }
      b.num_heads = heads;
      m.blocks.emplace_back(std::move(b));
    } else {
      r.fail("bad block kind");
    }
  }
  r.expect_end();
  try {
    m.validate();
    if (c.precision) c.precision->validate();
  } catch (const Error& e) {
    throw InputError(std::string("checkpoint: inconsistent model: ") + e.what());
  }
  if (m.vocab() != vocab || m.dim() != dim || m.num_heads() != heads) {
    throw InputError("checkpoint: header does not match tensor shapes");
  }
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("error while reading '" + path + "'");
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("error while writing '" + path + "'");
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  write_file_bytes(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace zq
