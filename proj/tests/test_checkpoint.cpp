#include <gtest/gtest.h>

#include <boost/crc.hpp>

#include "bem/checkpoint.hpp"
#include "bem/error.hpp"
#include "test_support.hpp"

using namespace bem;
namespace fs = std::filesystem;

namespace {

const BackboneSpec kSpec{3, 3, 2, 1, 1, Activation::SiLU};

}  // namespace

TEST(Checkpoint, BayesianRoundTripIsByteIdentical) {
    Model f = Model::build(kSpec, ModelKind::Bayesian, 4);
    AdaptivePrior prior = AdaptivePrior::from_posterior(f.posterior(), 0.99);
    prior.step = 17;
    const auto bytes = encode_checkpoint(1, f, &prior);
    ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BEMC");
    const Checkpoint ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.stage, 1u);
    EXPECT_TRUE(ck.model.bayesian());
    EXPECT_EQ(ck.model.spec(), kSpec);
    ASSERT_TRUE(ck.prior.has_value());
    EXPECT_EQ(ck.prior->beta, 0.99);
    EXPECT_EQ(ck.prior->step, 17u);
    EXPECT_EQ(encode_checkpoint(1, ck.model, &*ck.prior), bytes);
    for (std::size_t i = 0; i < f.posterior().size(); ++i) EXPECT_EQ(ck.model.posterior().layer(i).mu, f.posterior().layer(i).mu);
}

TEST(Checkpoint, DeterministicRoundTripAndF64) {
    const Model g = Model::build(BackboneSpec{6, 3, 2, 1, 1, Activation::SiLU}, ModelKind::Deterministic, 5, DType::F64);
    const auto bytes = encode_checkpoint(2, g);
    const Checkpoint ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.stage, 2u);
    EXPECT_FALSE(ck.prior.has_value());
    EXPECT_EQ(ck.model.weights()[0].dtype(), DType::F64);
    EXPECT_EQ(encode_checkpoint(2, ck.model), bytes);
}

TEST(Checkpoint, CorruptionAndVersion) {
    const Model g = Model::build(kSpec, ModelKind::Deterministic, 5);
    auto bytes = encode_checkpoint(2, g);
    auto flipped = bytes;
    flipped[40] ^= 0x01;
    EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), CheckpointError);

    // New version number with a valid CRC, so only the version check can fire.
    auto future = bytes;
    future[4] = 99;
    future.resize(future.size() - 4);
    boost::crc_32_type crc;
    crc.process_bytes(future.data(), future.size());
    const std::uint32_t sum = crc.checksum();
    for (int k = 0; k < 4; ++k) future.push_back(static_cast<std::uint8_t>(sum >> (8 * k)));
    try {
        decode_checkpoint(future);
        FAIL() << "expected version error";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, StageContracts) {
    const Model f = Model::build(kSpec, ModelKind::Bayesian, 4);
    EXPECT_THROW(encode_checkpoint(1, f), ContractError);
    EXPECT_THROW(encode_checkpoint(3, f), ContractError);
    const fs::path dir = bem::testing::temp_dir("ckpt");
    const Model g = Model::build(kSpec, ModelKind::Deterministic, 4);
    save_checkpoint(dir / "g.bemc", 2, g);
    EXPECT_NO_THROW(load_checkpoint(dir / "g.bemc", 2));
    EXPECT_THROW(load_checkpoint(dir / "g.bemc", 1), CheckpointError);
    EXPECT_THROW(load_checkpoint(dir / "nope.bemc"), CheckpointError);
    std::filesystem::remove_all(dir);
}
