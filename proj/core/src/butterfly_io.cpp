#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "bflu/butterfly.hpp"

namespace bflu {

namespace {

constexpr char kMagic[4] = {'B', 'F', 'L', 'Y'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("butterfly stream truncated", 0);
  return v;
}

void put_mat(std::ostream& out, const CMat& m) {
  put<std::int64_t>(out, m.rows());
  put<std::int64_t>(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Complex)));
}

CMat get_mat(std::istream& in) {
  const auto r = get<std::int64_t>(in), c = get<std::int64_t>(in);
  if (r < 0 || c < 0 || (r > 0 && c > (std::int64_t{1} << 40) / r))
    throw ParseError("butterfly stream has an invalid block shape", 0);
  CMat m(r, c);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Complex)));
  if (!in) throw ParseError("butterfly stream truncated", 0);
  return m;
}

}  // namespace

void write_butterfly(std::ostream& out, const Butterfly& b) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::int32_t>(out, b.levels());
  for (Index o : b.row_offsets()) put<std::int64_t>(out, o);
  for (Index o : b.col_offsets()) put<std::int64_t>(out, o);
  for (const auto& m : b.Q()) put_mat(out, m);
  for (const auto& lvl : b.R())
    for (const auto& m : lvl) put_mat(out, m);
  for (const auto& m : b.P()) put_mat(out, m);
  if (!out) throw Error("write_butterfly: stream error");
}

Butterfly read_butterfly(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a butterfly stream", 0);
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw ParseError("unsupported butterfly format version " + std::to_string(version), 0);
  const auto levels = get<std::int32_t>(in);
  if (levels < 0 || levels > 30) throw ParseError("butterfly stream has invalid level count", 0);
  const Index nl = Index{1} << levels;
  std::vector<Index> ro(static_cast<std::size_t>(nl) + 1), co(static_cast<std::size_t>(nl) + 1);
  for (auto& o : ro) o = get<std::int64_t>(in);
  for (auto& o : co) o = get<std::int64_t>(in);
  Butterfly b = Butterfly::zero(levels, ro, co);
  for (auto& m : b.Q()) m = get_mat(in);
  for (auto& lvl : b.R())
    for (auto& m : lvl) m = get_mat(in);
  for (auto& m : b.P()) m = get_mat(in);
  try {
    b.check();
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("inconsistent butterfly stream: ") + e.what(), 0);
  }
  return b;
}

}  // namespace bflu
