#include "aarchive/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "aarchive/errors.hpp"
#include "aarchive/log.hpp"

namespace aarchive::nifti {

namespace {

// NIfTI-1 datatype codes.
constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;
constexpr std::int16_t DT_FLOAT64 = 64;
constexpr std::int16_t DT_INT8 = 256;
constexpr std::int16_t DT_UINT16 = 512;
constexpr std::int16_t DT_UINT32 = 768;

#pragma pack(push, 1)
struct Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

template <typename T>
T byteswap_scalar(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void swap_header(Header& h) {
  h.sizeof_hdr = byteswap_scalar(h.sizeof_hdr);
  for (auto& d : h.dim) d = byteswap_scalar(d);
  h.intent_code = byteswap_scalar(h.intent_code);
  h.datatype = byteswap_scalar(h.datatype);
  h.bitpix = byteswap_scalar(h.bitpix);
  for (auto& p : h.pixdim) p = byteswap_scalar(p);
  h.vox_offset = byteswap_scalar(h.vox_offset);
  h.scl_slope = byteswap_scalar(h.scl_slope);
  h.scl_inter = byteswap_scalar(h.scl_inter);
  h.qform_code = byteswap_scalar(h.qform_code);
  h.sform_code = byteswap_scalar(h.sform_code);
  h.quatern_b = byteswap_scalar(h.quatern_b);
  h.quatern_c = byteswap_scalar(h.quatern_c);
  h.quatern_d = byteswap_scalar(h.quatern_d);
  h.qoffset_x = byteswap_scalar(h.qoffset_x);
  h.qoffset_y = byteswap_scalar(h.qoffset_y);
  h.qoffset_z = byteswap_scalar(h.qoffset_z);
  for (auto& v : h.srow_x) v = byteswap_scalar(v);
  for (auto& v : h.srow_y) v = byteswap_scalar(v);
  for (auto& v : h.srow_z) v = byteswap_scalar(v);
}

class GzReader {
public:
  explicit GzReader(const std::string& path) {
    // gzread handles plain files transparently, so one path serves both.
    file_ = gzopen(path.c_str(), "rb");
    if (!file_) throw IoError("cannot open '" + path + "' for reading");
    path_ = path;
  }
  ~GzReader() {
    if (file_) gzclose(file_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n) {
    auto* p = static_cast<std::uint8_t*>(dst);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 28));
      const int got = gzread(file_, p, chunk);
      if (got <= 0) throw FormatError("unexpected end of file in '" + path_ + "'");
      p += got;
      n -= static_cast<std::size_t>(got);
    }
  }

  void skip(std::size_t n) {
    std::vector<std::uint8_t> sink(std::min<std::size_t>(n, 4096));
    while (n > 0) {
      const std::size_t chunk = std::min(n, sink.size());
      read_exact(sink.data(), chunk);
      n -= chunk;
    }
  }

private:
  gzFile file_ = nullptr;
  std::string path_;
};

class GzWriter {
public:
  GzWriter(const std::string& path, bool compress) : compress_(compress) {
    if (compress_) {
      gz_ = gzopen(path.c_str(), "wb6");
      if (!gz_) throw IoError("cannot open '" + path + "' for writing");
    } else {
      plain_ = std::fopen(path.c_str(), "wb");
      if (!plain_) throw IoError("cannot open '" + path + "' for writing");
    }
    path_ = path;
  }
  ~GzWriter() {
    if (gz_) gzclose(gz_);
    if (plain_) std::fclose(plain_);
  }
  GzWriter(const GzWriter&) = delete;
  GzWriter& operator=(const GzWriter&) = delete;

  void write(const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 28));
      std::size_t put;
      if (gz_)
        put = static_cast<std::size_t>(gzwrite(gz_, p, chunk));
      else
        put = std::fwrite(p, 1, chunk, plain_);
      if (put == 0) throw IoError("write failed for '" + path_ + "'");
      p += put;
      n -= put;
    }
  }

private:
  bool compress_;
  gzFile gz_ = nullptr;
  std::FILE* plain_ = nullptr;
  std::string path_;
};

Eigen::Matrix4d affine_from_header(const Header& h) {
  Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      a(0, c) = h.srow_x[c];
      a(1, c) = h.srow_y[c];
      a(2, c) = h.srow_z[c];
    }
    return a;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a0sq = 1.0 - (b * b + c * c + d * d);
    const double w = a0sq > 0 ? std::sqrt(a0sq) : 0.0;
    Eigen::Matrix3d r;
    r << w * w + b * b - c * c - d * d, 2 * (b * c - w * d), 2 * (b * d + w * c),
        2 * (b * c + w * d), w * w + c * c - b * b - d * d, 2 * (c * d - w * b),
        2 * (b * d - w * c), 2 * (c * d + w * b), w * w + d * d - b * b - c * c;
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    for (int col = 0; col < 3; ++col) {
      double scale = h.pixdim[col + 1];
      if (col == 2) scale *= qfac;
      a.block<3, 1>(0, col) = r.col(col) * scale;
    }
    a(0, 3) = h.qoffset_x;
    a(1, 3) = h.qoffset_y;
    a(2, 3) = h.qoffset_z;
    return a;
  }
  // Neither form present: fall back to a scaling affine from pixdim.
  for (int c = 0; c < 3; ++c) a(c, c) = h.pixdim[c + 1] != 0 ? h.pixdim[c + 1] : 1.0;
  return a;
}

struct RawFile {
  Header header;
  Eigen::Vector3i dims;
  Eigen::Matrix4d affine;
  std::vector<std::uint8_t> payload;  // in file byte order
  bool swapped;
};

RawFile read_raw(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: '" + path + "'");

  GzReader in(path);
  RawFile raw;
  in.read_exact(&raw.header, sizeof(Header));

  raw.swapped = false;
  if (raw.header.sizeof_hdr != 348) {
    swap_header(raw.header);
    raw.swapped = true;
    if (raw.header.sizeof_hdr != 348)
      throw FormatError("'" + path + "' is not a NIfTI-1 file (bad sizeof_hdr)");
  }
  const Header& h = raw.header;
  if (std::memcmp(h.magic, "n+1", 3) != 0) {
    if (std::memcmp(h.magic, "ni1", 3) == 0)
      throw UnsupportedError("two-file NIfTI (.hdr/.img) is not supported: '" + path + "'");
    throw FormatError("'" + path + "' has no NIfTI-1 magic");
  }
  if (h.dim[0] < 1 || h.dim[0] > 7)
    throw FormatError("'" + path + "' has invalid dimension count " + std::to_string(h.dim[0]));
  for (int d = 4; d <= h.dim[0]; ++d)
    if (h.dim[d] > 1)
      throw UnsupportedError("'" + path + "' is a " + std::to_string(h.dim[0]) +
                             "D series; only 3D volumes are supported");

  raw.dims = Eigen::Vector3i(h.dim[1], h.dim[0] >= 2 ? h.dim[2] : 1, h.dim[0] >= 3 ? h.dim[3] : 1);
  if (raw.dims.minCoeff() <= 0) throw FormatError("'" + path + "' has non-positive dimensions");
  raw.affine = affine_from_header(h);

  std::size_t elem_size = 0;
  switch (h.datatype) {
    case DT_UINT8:
    case DT_INT8: elem_size = 1; break;
    case DT_INT16:
    case DT_UINT16: elem_size = 2; break;
    case DT_INT32:
    case DT_UINT32:
    case DT_FLOAT32: elem_size = 4; break;
    case DT_FLOAT64: elem_size = 8; break;
    default:
      throw UnsupportedError("'" + path + "' uses unsupported datatype code " +
                             std::to_string(h.datatype));
  }

  const std::size_t count = static_cast<std::size_t>(raw.dims.x()) * raw.dims.y() * raw.dims.z();
  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < sizeof(Header)) throw FormatError("'" + path + "' has invalid vox_offset");
  in.skip(offset - sizeof(Header));
  raw.payload.resize(count * elem_size);
  in.read_exact(raw.payload.data(), raw.payload.size());
  return raw;
}

template <typename FileT, typename OutT, typename Transform>
void convert_payload(const RawFile& raw, Volume<OutT>& out, Transform&& tf) {
  const auto* src = reinterpret_cast<const FileT*>(raw.payload.data());
  auto& dst = out.raw();
  for (std::size_t n = 0; n < dst.size(); ++n) {
    FileT v = src[n];
    if (raw.swapped) v = byteswap_scalar(v);
    dst[n] = tf(v);
  }
}

template <typename OutT, typename Transform>
Volume<OutT> decode(const RawFile& raw, Transform&& tf) {
  Volume<OutT> out(raw.dims, raw.affine);
  switch (raw.header.datatype) {
    case DT_UINT8: convert_payload<std::uint8_t>(raw, out, tf); break;
    case DT_INT8: convert_payload<std::int8_t>(raw, out, tf); break;
    case DT_INT16: convert_payload<std::int16_t>(raw, out, tf); break;
    case DT_UINT16: convert_payload<std::uint16_t>(raw, out, tf); break;
    case DT_INT32: convert_payload<std::int32_t>(raw, out, tf); break;
    case DT_UINT32: convert_payload<std::uint32_t>(raw, out, tf); break;
    case DT_FLOAT32: convert_payload<float>(raw, out, tf); break;
    case DT_FLOAT64: convert_payload<double>(raw, out, tf); break;
    default: break;  // unreachable, read_raw rejected it
  }
  return out;
}

bool has_scaling(const Header& h) {
  return h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f) &&
         !std::isnan(h.scl_slope);
}

template <typename T>
struct DatatypeOf;
template <>
struct DatatypeOf<float> {
  static constexpr std::int16_t code = DT_FLOAT32;
};
template <>
struct DatatypeOf<std::int16_t> {
  static constexpr std::int16_t code = DT_INT16;
};
template <>
struct DatatypeOf<std::int32_t> {
  static constexpr std::int16_t code = DT_INT32;
};
template <>
struct DatatypeOf<std::uint8_t> {
  static constexpr std::int16_t code = DT_UINT8;
};

bool wants_gzip(const std::string& path) {
  return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

template <typename T>
void write_impl(const Volume<T>& vol, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "writer assumes a little-endian host");
  for (const auto& v : vol.raw())
    if constexpr (std::is_floating_point_v<T>)
      if (!std::isfinite(v)) throw DomainError("refusing to write non-finite voxel values");

  Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(vol.dims().x());
  h.dim[2] = static_cast<std::int16_t>(vol.dims().y());
  h.dim[3] = static_cast<std::int16_t>(vol.dims().z());
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = DatatypeOf<T>::code;
  h.bitpix = static_cast<std::int16_t>(8 * sizeof(T));
  const Eigen::Vector3d sp = vol.spacing();
  h.pixdim[0] = 1.0f;
  for (int d = 0; d < 3; ++d) h.pixdim[d + 1] = static_cast<float>(sp[d]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 2;
  h.qform_code = 0;
  const Eigen::Matrix4d& a = vol.affine();
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(a(0, c));
    h.srow_y[c] = static_cast<float>(a(1, c));
    h.srow_z[c] = static_cast<float>(a(2, c));
  }
  std::memcpy(h.magic, "n+1", 4);

  GzWriter out(path, wants_gzip(path));
  out.write(&h, sizeof(h));
  const std::uint32_t pad = 0;  // empty extension marker
  out.write(&pad, 4);
  out.write(vol.raw().data(), vol.raw().size() * sizeof(T));
}

}  // namespace

VolumeGrid read_volume(const std::string& path) {
  const RawFile raw = read_raw(path);
  const bool scale = has_scaling(raw.header);
  const float slope = scale ? raw.header.scl_slope : 1.0f;
  const float inter = scale ? raw.header.scl_inter : 0.0f;
  return decode<float>(raw, [&](auto v) { return static_cast<float>(v) * slope + inter; });
}

Volume<std::int32_t> read_labels(const std::string& path) {
  const RawFile raw = read_raw(path);
  if (has_scaling(raw.header))
    throw FormatError("label map '" + path + "' carries a scale slope; refusing to rescale labels");
  if (raw.header.datatype == DT_FLOAT32 || raw.header.datatype == DT_FLOAT64)
    log::warn("label map '", path, "' is stored as floating point; truncating to integers");
  auto vol = decode<std::int32_t>(raw, [](auto v) { return static_cast<std::int32_t>(v); });
  for (const auto& v : vol.raw())
    if (v < 0) throw FormatError("label map '" + path + "' contains negative labels");
  return vol;
}

void write_volume(const VolumeGrid& vol, const std::string& path) { write_impl(vol, path); }
void write_volume(const Volume<std::int16_t>& vol, const std::string& path) {
  write_impl(vol, path);
}
void write_volume(const Volume<std::int32_t>& vol, const std::string& path) {
  write_impl(vol, path);
}
void write_volume(const Volume<std::uint8_t>& vol, const std::string& path) {
  write_impl(vol, path);
}

}  // namespace aarchive::nifti
