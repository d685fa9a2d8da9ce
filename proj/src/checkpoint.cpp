#include <fstream>

#include "binary_io.hpp"
#include "linefl/adapter.hpp"
#include "linefl/error.hpp"

namespace linefl::adapter {

namespace {

constexpr char kMagic[4] = {'L', 'N', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint32_t kMaxTensorElements = 1u << 30;

}  // namespace

// Layout (little-endian): magic "LNCK", u16 version, u16 flags,
// config {u32 D, u32 d, u32 layers, u32 heads, u32 ff, f64 dropout,
// u8 positional, u32 window}, u64 step, u32 best_epoch,
// u32 n_seeds + u64 seeds, u32 n_tensors, then per tensor
// {u8 name_len, name, u32 rows, u32 cols, f32 values row-major}.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReferenceError("cannot write checkpoint " + path.string());
  const auto& c = ckpt.model.config();
  out.write(kMagic, 4);
  detail::put_le<std::uint16_t>(out, kVersion);
  detail::put_le<std::uint16_t>(out, 0);
  detail::put_le<std::uint32_t>(out, c.input_dim);
  detail::put_le<std::uint32_t>(out, c.model_dim);
  detail::put_le<std::uint32_t>(out, c.n_layers);
  detail::put_le<std::uint32_t>(out, c.n_heads);
  detail::put_le<std::uint32_t>(out, c.ff_multiplier);
  detail::put_f64(out, c.dropout);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(c.positional));
  detail::put_le<std::uint32_t>(out, c.window);
  detail::put_le<std::uint64_t>(out, ckpt.step);
  detail::put_le<std::uint32_t>(out, ckpt.best_epoch);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.seed_lineage.size()));
  for (auto s : ckpt.seed_lineage) detail::put_le<std::uint64_t>(out, s);

  std::uint32_t n_tensors = 0;
  ckpt.model.params().for_each([&](const std::string&, const Mat<float>&) { ++n_tensors; });
  detail::put_le<std::uint32_t>(out, n_tensors);
  ckpt.model.params().for_each([&](const std::string& name, const Mat<float>& m) {
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f32(out, m.data()[i]);
  });
  if (!out) throw ReferenceError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceError("cannot open checkpoint " + path.string());
  detail::Reader r(in, path.string());

  unsigned char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(FormatError::Kind::BadMagic, path.string() + ": not a checkpoint (bad magic)");
  }
  if (auto v = r.get_le<std::uint16_t>("version"); v != kVersion) {
    throw FormatError(FormatError::Kind::BadVersion, path.string() + ": unsupported checkpoint version " +
                                                         std::to_string(v));
  }
  r.get_le<std::uint16_t>("flags");

  AdapterConfig c;
  c.input_dim = r.get_le<std::uint32_t>("input dim");
  c.model_dim = r.get_le<std::uint32_t>("model dim");
  c.n_layers = r.get_le<std::uint32_t>("layer count");
  c.n_heads = r.get_le<std::uint32_t>("head count");
  c.ff_multiplier = r.get_le<std::uint32_t>("ff multiplier");
  c.dropout = r.get_f64("dropout");
  const auto pos = r.get_le<std::uint8_t>("positional encoding");
  if (pos > 2) throw FormatError(path.string() + ": unknown positional encoding " + std::to_string(pos));
  c.positional = static_cast<PositionalEncoding>(pos);
  c.window = r.get_le<std::uint32_t>("window");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::HeaderMismatch, path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  ckpt.step = r.get_le<std::uint64_t>("step");
  ckpt.best_epoch = r.get_le<std::uint32_t>("best epoch");
  const auto n_seeds = r.get_le<std::uint32_t>("seed count");
  if (n_seeds > 1024) throw FormatError(FormatError::Kind::Oversized, path.string() + ": implausible seed count");
  for (std::uint32_t i = 0; i < n_seeds; ++i) ckpt.seed_lineage.push_back(r.get_le<std::uint64_t>("seed"));

  // Shapes come from the config; the file must agree tensor by tensor.
  AdapterModel<float> model = init<float>(c, 0);
  AdapterParams<float> params = model.params();
  std::uint32_t expected = 0;
  params.for_each([&](const std::string&, const Mat<float>&) { ++expected; });
  if (r.get_le<std::uint32_t>("tensor count") != expected) {
    throw FormatError(FormatError::Kind::HeaderMismatch, path.string() + ": tensor count does not match config");
  }
  params.for_each([&](const std::string& name, Mat<float>& m) {
    const auto len = r.get_le<std::uint8_t>("tensor name length");
    const std::string got = r.get_string(len, "tensor name");
    const auto rows = r.get_le<std::uint32_t>("tensor rows");
    const auto cols = r.get_le<std::uint32_t>("tensor cols");
    if (got != name || rows != m.rows() || cols != m.cols() || std::uint64_t{rows} * cols > kMaxTensorElements) {
      throw FormatError(FormatError::Kind::HeaderMismatch,
                        path.string() + ": tensor '" + got + "' does not match expected '" + name + "' " +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.get_f32("tensor values");
    if (!m.allFinite()) throw FormatError(path.string() + ": non-finite value in tensor " + name);
  });
  if (!r.at_eof()) throw FormatError(FormatError::Kind::HeaderMismatch, path.string() + ": trailing bytes");
  ckpt.model = AdapterModel<float>(c, std::move(params));
  return ckpt;
}

}  // namespace linefl::adapter
