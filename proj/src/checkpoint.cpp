#include "bem/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bem/error.hpp"

namespace bem {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'E', 'M', 'C'};

class Writer {
  public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void put_tensor(const std::string& name, const Tensor& t) {
        put(static_cast<std::uint32_t>(name.size()));
        put_bytes(name.data(), name.size());
        put(static_cast<std::uint8_t>(t.dtype()));
        put(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put(static_cast<std::uint64_t>(d));
        for (double v : t.data()) {
            if (t.dtype() == DType::F32) {
                put(static_cast<float>(v));
            } else {
                put(v);
            }
        }
    }

    std::vector<std::uint8_t> bytes;
};

class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string get_string(std::size_t n) {
        need(n, "name");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::pair<std::string, Tensor> get_tensor() {
        const auto name_len = get<std::uint32_t>("name length");
        if (name_len > 4096) throw CheckpointError("implausible tensor name length at byte " + std::to_string(pos_));
        std::string name = get_string(name_len);
        const auto code = get<std::uint8_t>("dtype");
        if (code != 1 && code != 2) {
            throw CheckpointError("tensor " + name + ": unknown dtype code " + std::to_string(code));
        }
        const DType dtype = static_cast<DType>(code);
        const auto rank = get<std::uint32_t>("rank");
        if (rank == 0 || rank > 8) throw CheckpointError("tensor " + name + ": bad rank " + std::to_string(rank));
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = get<std::uint64_t>("dimension");
            if (d == 0 || d > (std::uint64_t{1} << 32)) {
                throw CheckpointError("tensor " + name + ": bad dimension " + std::to_string(d));
            }
            shape.push_back(static_cast<std::size_t>(d));
            numel *= shape.back();
        }
        const std::size_t width = dtype == DType::F32 ? 4 : 8;
        need(numel * width, "payload");
        std::vector<double> data(numel);
        for (auto& v : data) {
            v = dtype == DType::F32 ? static_cast<double>(get<float>("payload")) : get<double>("payload");
        }
        Tensor t(std::move(shape), std::move(data), dtype);
        if (!t.is_finite()) throw CheckpointError("tensor " + name + " holds non-finite values");
        return {std::move(name), std::move(t)};
    }
    std::size_t position() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(std::string("truncated checkpoint reading ") + what + " at byte " +
                                  std::to_string(pos_));
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

void expect_name(const std::string& got, const std::string& want) {
    if (got != want) throw CheckpointError("expected tensor '" + want + "', found '" + got + "'");
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::uint32_t stage, const Model& model, const AdaptivePrior* prior) {
    if (stage != 1 && stage != 2) throw ContractError("checkpoint stage must be 1 or 2");
    if (prior && !(stage == 1 && model.bayesian())) {
        throw ContractError("only a Bayesian stage-1 checkpoint carries a prior");
    }
    if (stage == 1 && model.bayesian() && !prior) throw ContractError("Bayesian stage-1 checkpoint needs its prior");
    Writer w;
    w.put_bytes(kMagic, 4);
    w.put(kCheckpointVersion);
    w.put(stage);
    w.put(static_cast<std::uint32_t>(model.kind()));
    const auto& s = model.spec();
    for (auto v : {s.in_channels, s.out_channels, s.base_channels, s.levels, s.blocks_per_level}) {
        w.put(static_cast<std::uint32_t>(v));
    }
    w.put(static_cast<std::uint32_t>(s.activation));

    const auto layout = model.layout();
    if (model.bayesian()) {
        const auto& post = model.posterior();
        w.put(static_cast<std::uint32_t>(2 * post.size()));
        for (std::size_t i = 0; i < post.size(); ++i) {
            w.put_tensor(layout[i].name + ".mu", post.layer(i).mu);
            w.put_tensor(layout[i].name + ".rho", post.layer(i).rho);
        }
    } else {
        const auto& weights = model.weights();
        w.put(static_cast<std::uint32_t>(weights.size()));
        for (std::size_t i = 0; i < weights.size(); ++i) w.put_tensor(layout[i].name, weights[i]);
    }

    if (prior) {
        prior->validate_against(model.posterior());
        w.put(prior->beta);
        w.put(static_cast<std::uint64_t>(prior->step));
        w.put(static_cast<std::uint32_t>(2 * prior->mu_ema.size()));
        for (std::size_t i = 0; i < prior->mu_ema.size(); ++i) {
            w.put_tensor(layout[i].name + ".prior_mu", prior->mu_ema[i]);
            w.put_tensor(layout[i].name + ".prior_sigma", prior->sigma_ema[i]);
        }
    }
    w.put(crc32_of(w.bytes));
    return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
    const auto body = bytes.first(bytes.size() - 4);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 4);
    if (crc32_of(body) != stored) throw CheckpointError("checkpoint CRC mismatch (file corrupted)");

    Reader r(body);
    r.get_string(4);
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto stage = r.get<std::uint32_t>("stage");
    if (stage != 1 && stage != 2) throw CheckpointError("bad stage tag " + std::to_string(stage));
    const auto kind_code = r.get<std::uint32_t>("model kind");
    if (kind_code != 1 && kind_code != 2) throw CheckpointError("bad model kind " + std::to_string(kind_code));
    const auto kind = static_cast<ModelKind>(kind_code);

    BackboneSpec spec;
    spec.in_channels = r.get<std::uint32_t>("spec");
    spec.out_channels = r.get<std::uint32_t>("spec");
    spec.base_channels = r.get<std::uint32_t>("spec");
    spec.levels = r.get<std::uint32_t>("spec");
    spec.blocks_per_level = r.get<std::uint32_t>("spec");
    const auto act = r.get<std::uint32_t>("spec");
    if (act != static_cast<std::uint32_t>(Activation::SiLU)) throw CheckpointError("unknown activation " + std::to_string(act));
    spec.activation = Activation::SiLU;
    try {
        spec.validate();
    } catch (const Error& e) {
        throw CheckpointError(std::string("invalid backbone spec: ") + e.what());
    }
    const auto layout = parameter_layout(spec);

    const auto count = r.get<std::uint32_t>("tensor count");
    const std::size_t per_slot = kind == ModelKind::Bayesian ? 2 : 1;
    if (count != per_slot * layout.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                              std::to_string(per_slot * layout.size()));
    }

    auto build = [&]() -> Model {
        try {
            if (kind == ModelKind::Bayesian) {
                BayesModule post;
                for (const auto& slot : layout) {
                    auto [mn, mu] = r.get_tensor();
                    expect_name(mn, slot.name + ".mu");
                    auto [rn, rho] = r.get_tensor();
                    expect_name(rn, slot.name + ".rho");
                    post.add(slot.name, VariationalParams{std::move(mu), std::move(rho)});
                }
                return Model::from_posterior(spec, std::move(post));
            }
            std::vector<Tensor> weights;
            for (const auto& slot : layout) {
                auto [n, t] = r.get_tensor();
                expect_name(n, slot.name);
                weights.push_back(std::move(t));
            }
            return Model::from_weights(spec, std::move(weights));
        } catch (const CheckpointError&) {
            throw;
        } catch (const Error& e) {
            throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
        }
    };
    Checkpoint ck{stage, build(), std::nullopt};

    if (stage == 1 && kind == ModelKind::Bayesian) {
        AdaptivePrior prior;
        prior.beta = r.get<double>("prior beta");
        prior.step = r.get<std::uint64_t>("prior step");
        const auto n = r.get<std::uint32_t>("prior count");
        if (n != 2 * layout.size()) throw CheckpointError("prior table has " + std::to_string(n) + " tensors");
        for (const auto& slot : layout) {
            auto [mn, mu] = r.get_tensor();
            expect_name(mn, slot.name + ".prior_mu");
            auto [sn, sigma] = r.get_tensor();
            expect_name(sn, slot.name + ".prior_sigma");
            prior.mu_ema.push_back(std::move(mu));
            prior.sigma_ema.push_back(std::move(sigma));
        }
        try {
            prior.validate_against(ck.model.posterior());
        } catch (const Error& e) {
            throw CheckpointError(std::string("inconsistent prior: ") + e.what());
        }
        ck.prior = std::move(prior);
    }
    if (!r.done()) throw CheckpointError("trailing bytes after checkpoint body at byte " + std::to_string(r.position()));
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, std::uint32_t stage, const Model& model,
                     const AdaptivePrior* prior) {
    const auto bytes = encode_checkpoint(stage, model, prior);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint32_t expected_stage) {
    auto ck = load_checkpoint(path);
    if (ck.stage != expected_stage) {
        throw CheckpointError(path.string() + " is a stage-" + std::to_string(ck.stage) + " checkpoint, expected stage " +
                              std::to_string(expected_stage));
    }
    return ck;
}

}  // namespace bem
