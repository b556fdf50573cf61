#include "cumulus/blob.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cumulus/errors.hpp"

namespace cumulus {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'W', '1'};
constexpr int kMaxRank = 8;

void put_u64le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is.good()) throw ModelIOError("truncated blob: missing extent");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename T, typename U>
void put_scalar_le(std::ostream& os, T value) {
  U bits = std::bit_cast<U>(value);
  unsigned char b[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename T, typename U>
T get_scalar_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  is.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!is.good()) throw ModelIOError("truncated blob: missing payload");
  U bits = 0;
  for (size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(b[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  unsigned char code = static_cast<unsigned char>(t.dtype());
  unsigned char rank = static_cast<unsigned char>(t.rank());
  os.put(static_cast<char>(code));
  os.put(static_cast<char>(rank));
  for (int i = 0; i < 10; ++i) os.put(0);
  for (int64_t e : t.shape()) put_u64le(os, static_cast<uint64_t>(e));
  switch (t.dtype()) {
    case DType::F32:
      for (float v : t.f()) put_scalar_le<float, uint32_t>(os, v);
      break;
    case DType::F64:
      for (double v : t.d()) put_scalar_le<double, uint64_t>(os, v);
      break;
    case DType::I8:
      os.write(reinterpret_cast<const char*>(t.q().data()),
               static_cast<std::streamsize>(t.numel()));
      break;
    case DType::I32:
      for (int32_t v : t.i()) put_scalar_le<int32_t, uint32_t>(os, v);
      break;
  }
  if (!os.good()) throw ModelIOError("blob write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is.good()) throw ModelIOError("truncated blob: missing header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ModelIOError("bad blob magic");
  int code = is.get();
  int rank = is.get();
  char reserved[10];
  is.read(reserved, 10);
  if (!is.good()) throw ModelIOError("truncated blob: short header");
  if (code < 0 || code > 3) throw ModelIOError("unknown dtype code " + std::to_string(code));
  if (rank < 1 || rank > kMaxRank) throw ModelIOError("bad blob rank " + std::to_string(rank));

  Shape shape(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    uint64_t e = get_u64le(is);
    if (e == 0 || e > (1ull << 40)) throw ModelIOError("bad blob extent");
    shape[static_cast<size_t>(i)] = static_cast<int64_t>(e);
  }
  int64_t n = shape_numel(shape);

  switch (static_cast<DType>(code)) {
    case DType::F32: {
      std::vector<float> v(static_cast<size_t>(n));
      for (auto& x : v) x = get_scalar_le<float, uint32_t>(is);
      return Tensor::from_f32(std::move(shape), std::move(v));
    }
    case DType::F64: {
      std::vector<double> v(static_cast<size_t>(n));
      for (auto& x : v) x = get_scalar_le<double, uint64_t>(is);
      return Tensor::from_f64(std::move(shape), std::move(v));
    }
    case DType::I8: {
      std::vector<int8_t> v(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n));
      if (!is.good()) throw ModelIOError("truncated blob: missing payload");
      return Tensor::from_i8(std::move(shape), std::move(v), QuantParams{0});
    }
    case DType::I32: {
      std::vector<int32_t> v(static_cast<size_t>(n));
      for (auto& x : v) x = get_scalar_le<int32_t, uint32_t>(is);
      return Tensor::from_i32(std::move(shape), std::move(v));
    }
  }
  throw ModelIOError("unreachable dtype");
}

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ModelIOError("cannot open " + path + " for writing");
  for (const Tensor& t : tensors) write_tensor(os, t);
}

std::vector<Tensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ModelIOError("cannot open " + path);
  std::vector<Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    out.push_back(read_tensor(is));
  }
  return out;
}

}  // namespace cumulus
