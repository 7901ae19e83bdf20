/* Generated by proxysynth. */
#include <mpi.h>
#include <stdio.h>
#include <stdlib.h>

#ifndef PROXY_LOG
#define PROXY_LOG(key) ((void)0)
#endif

#define PROXY_MEM_WORDS (1u << 20)

static int proxy_rank;
static int proxy_size;
static char *sbuf;
static char *rbuf;
static unsigned long long proxy_mem[PROXY_MEM_WORDS];
static volatile unsigned long long proxy_sink;

/* One macro per code block; the argument is the repetition count. Results
   land in a volatile sink so the compiler keeps the work. */
#define BLOCK1(n) do { unsigned long long i_, a_ = proxy_sink; \
    for (i_ = 0; i_ < (n); i_++) { a_ += i_ ^ (a_ >> 3); } proxy_sink = a_; } while (0)
#define BLOCK2(n) do { unsigned long long i_, a_ = proxy_sink | 1u; \
    for (i_ = 0; i_ < (n); i_++) { a_ = (a_ << 1) ^ (a_ >> 7) ^ i_; } proxy_sink = a_; } while (0)
#define BLOCK3(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { a_ += proxy_mem[i_ & 1023u] + proxy_mem[(i_ + 512u) & 1023u]; } \
    proxy_sink = a_; } while (0)
#define BLOCK4(n) do { unsigned long long i_; \
    for (i_ = 0; i_ < (n); i_++) { proxy_mem[i_ & 1023u] = i_; proxy_mem[(i_ + 512u) & 1023u] = i_ + 1u; } \
    proxy_sink = proxy_mem[0]; } while (0)
#define BLOCK5(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { a_ += proxy_mem[(i_ * 4099u) & (PROXY_MEM_WORDS - 1u)]; } \
    proxy_sink = a_; } while (0)
#define BLOCK6(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { if (i_ & 1u) a_ += 3u; else a_ ^= 5u; } proxy_sink = a_; } while (0)
#define BLOCK7(n) do { unsigned long long i_, a_ = 0, s_ = proxy_sink | 1u; \
    for (i_ = 0; i_ < (n); i_++) { s_ = s_ * 6364136223846793005ULL + 1442695040888963407ULL; \
        if (s_ >> 63) a_ += 3u; else a_ ^= 5u; } proxy_sink = a_; } while (0)
#define BLOCK8(n) do { unsigned long long i_, a_ = 0; \
    for (i_ = 0; i_ < (n); i_++) { unsigned long long v_ = proxy_mem[(i_ * 7u) & 4095u]; \
        if (v_ & 1u) a_ += v_; else a_ ^= i_; } proxy_sink = a_; } while (0)
#define BLOCK9(n) do { unsigned long long i_, a_ = proxy_sink | 1u; \
    for (i_ = 0; i_ < (n); i_++) { a_ = a_ * 2862933555777941757ULL + 3037000493ULL; } proxy_sink = a_; } while (0)
#define BLOCK10(n) do { volatile unsigned long long i_; for (i_ = 0; i_ < (n); i_++) { } } while (0)
#define BLOCK11(n) do { volatile unsigned long long i_; for (i_ = 0; i_ < (n); i_++) { } } while (0)

#define PROXY_WORLD 8
#define PROXY_SLOT_BYTES 4096ULL
static MPI_Comm comms[1];

static void t0(void)
{
    PROXY_LOG("COMPUTE 299140 247952 89812 3003 29826 604");
    BLOCK1(169ULL);
    BLOCK2(1ULL);
    BLOCK3(116ULL);
    BLOCK4(639ULL);
    BLOCK6(291ULL);
    BLOCK7(32ULL);
    BLOCK8(2ULL);
    BLOCK9(432ULL);
    BLOCK10(2ULL);
    BLOCK11(3ULL);
}

static void t1(void)
{
    PROXY_LOG("SEND vol=4096 peer=+1 tag=0 comm=0");
    MPI_Send(sbuf, 0, MPI_BYTE, proxy_rank + 1, 0, comms[0]);
}

static void t2(void)
{
    PROXY_LOG("RECV vol=4096 peer=+7 tag=0 comm=0");
    MPI_Recv(rbuf, 0, MPI_BYTE, proxy_rank + 7, 0, comms[0], MPI_STATUS_IGNORE);
}

static void t3(void)
{
    PROXY_LOG("RECV vol=4096 peer=-1 tag=0 comm=0");
    MPI_Recv(rbuf, 0, MPI_BYTE, proxy_rank - 1, 0, comms[0], MPI_STATUS_IGNORE);
}

static void t4(void)
{
    PROXY_LOG("SENDRECV vol=64 peer=+0 src=+0 tag=99 comm=0");
    MPI_Sendrecv(sbuf, 0, MPI_BYTE, proxy_rank, 99, rbuf, 0, MPI_BYTE, proxy_rank, 99, comms[0], MPI_STATUS_IGNORE);
}

static void t5(void)
{
    PROXY_LOG("SENDRECV vol=65 peer=+0 src=+0 tag=99 comm=0");
    MPI_Sendrecv(sbuf, 0, MPI_BYTE, proxy_rank, 99, rbuf, 0, MPI_BYTE, proxy_rank, 99, comms[0], MPI_STATUS_IGNORE);
}

static void t6(void)
{
    PROXY_LOG("SENDRECV vol=66 peer=+0 src=+0 tag=99 comm=0");
    MPI_Sendrecv(sbuf, 0, MPI_BYTE, proxy_rank, 99, rbuf, 0, MPI_BYTE, proxy_rank, 99, comms[0], MPI_STATUS_IGNORE);
}

static void t7(void)
{
    PROXY_LOG("SEND vol=4096 peer=-7 tag=0 comm=0");
    MPI_Send(sbuf, 0, MPI_BYTE, proxy_rank - 7, 0, comms[0]);
}

static void r0(void)
{
    t0();
    t1();
    t2();
}

static void r1(void)
{
    t0();
    t3();
    t1();
}

static void r2(void)
{
    t0();
    t1();
    t3();
}

static void r3(void)
{
    t0();
    t3();
    t7();
}

int main(int argc, char **argv)
{
    MPI_Init(&argc, &argv);
    MPI_Comm_rank(MPI_COMM_WORLD, &proxy_rank);
    MPI_Comm_size(MPI_COMM_WORLD, &proxy_size);
    if (proxy_size != PROXY_WORLD) {
        fprintf(stderr, "this proxy app needs %d ranks, got %d\n", PROXY_WORLD, proxy_size);
        MPI_Abort(MPI_COMM_WORLD, 1);
    }
    comms[0] = MPI_COMM_WORLD;
    sbuf = calloc(32768u, 1);
    rbuf = calloc(32768u, 1);
    if (!sbuf || !rbuf) {
        MPI_Abort(MPI_COMM_WORLD, 2);
    }
    if (proxy_rank == 0) {
        { unsigned long long k_; for (k_ = 0; k_ < 30ULL; k_++) r0(); }
    }
    if (proxy_rank == 1 || proxy_rank == 3) {
        { unsigned long long k_; for (k_ = 0; k_ < 30ULL; k_++) r1(); }
    }
    if (proxy_rank == 2 || proxy_rank == 4 || proxy_rank == 6) {
        { unsigned long long k_; for (k_ = 0; k_ < 30ULL; k_++) r2(); }
    }
    if (proxy_rank == 5) {
        { unsigned long long k_; for (k_ = 0; k_ < 30ULL; k_++) r1(); }
        t4();
        t5();
        t6();
        t4();
    }
    if (proxy_rank == 7) {
        { unsigned long long k_; for (k_ = 0; k_ < 30ULL; k_++) r3(); }
    }
    free(sbuf);
    free(rbuf);
    MPI_Finalize();
    return 0;
}
