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

#define PROXY_WORLD 4
#define PROXY_SLOT_BYTES 4096ULL
static MPI_Comm comms[3];

static void t0(void)
{
    PROXY_LOG("COMPUTE 400000 320000 120000 4000 48000 1200");
    BLOCK1(163ULL);
    BLOCK2(6ULL);
    BLOCK3(974ULL);
    BLOCK4(8ULL);
    BLOCK5(26ULL);
    BLOCK6(534ULL);
    BLOCK7(65ULL);
    BLOCK8(1ULL);
    BLOCK9(512ULL);
    BLOCK10(13ULL);
    BLOCK11(100ULL);
}

static void t1(void)
{
    PROXY_LOG("COMM_SPLIT color=0 comm=0 newcomm=1");
    MPI_Comm_split(comms[0], 0, proxy_rank, &comms[1]);
}

static void t2(void)
{
    PROXY_LOG("COMPUTE 50000 40000 10000 500 5000 100");
    BLOCK1(72ULL);
    BLOCK2(14ULL);
    BLOCK3(58ULL);
    BLOCK4(6ULL);
    BLOCK5(8ULL);
    BLOCK6(47ULL);
    BLOCK7(5ULL);
    BLOCK8(1ULL);
    BLOCK9(61ULL);
    BLOCK11(18ULL);
}

static void t3(void)
{
    PROXY_LOG("ALLREDUCE vol=1024 comm=1");
    MPI_Allreduce(sbuf, rbuf, 0, MPI_BYTE, MPI_BOR, comms[1]);
}

static void t4(void)
{
    PROXY_LOG("BCAST vol=4096 peer=r0 comm=1");
    MPI_Bcast(sbuf, 0, MPI_BYTE, 0, comms[1]);
}

static void t5(void)
{
    PROXY_LOG("COMM_DUP comm=0 newcomm=2");
    MPI_Comm_dup(comms[0], &comms[2]);
}

static void t6(void)
{
    PROXY_LOG("REDUCE vol=512 peer=r0 comm=2");
    MPI_Reduce(sbuf, rbuf, 0, MPI_BYTE, MPI_BOR, 0, comms[2]);
}

static void t7(void)
{
    PROXY_LOG("ALLTOALL vol=128 comm=0");
    MPI_Alltoall(sbuf, 0, MPI_BYTE, rbuf, 0, MPI_BYTE, comms[0]);
}

static void t8(void)
{
    PROXY_LOG("SENDRECV vol=2048 peer=+1 src=+3 tag=7 comm=0");
    MPI_Sendrecv(sbuf, 0, MPI_BYTE, proxy_rank + 1, 7, rbuf, 0, MPI_BYTE, proxy_rank + 3, 7, comms[0], MPI_STATUS_IGNORE);
}

static void t9(void)
{
    PROXY_LOG("BARRIER comm=0");
    MPI_Barrier(comms[0]);
}

static void t10(void)
{
    PROXY_LOG("COMM_FREE comm=1");
    MPI_Comm_free(&comms[1]);
}

static void t11(void)
{
    PROXY_LOG("COMM_FREE comm=2");
    MPI_Comm_free(&comms[2]);
}

static void t12(void)
{
    PROXY_LOG("COMPUTE 90000 70000 20000 900 9000 200");
    BLOCK1(131ULL);
    BLOCK3(133ULL);
    BLOCK4(4ULL);
    BLOCK5(13ULL);
    BLOCK6(42ULL);
    BLOCK7(11ULL);
    BLOCK9(106ULL);
    BLOCK10(51ULL);
    BLOCK11(197ULL);
}

static void t13(void)
{
    PROXY_LOG("RECV vol=64 peer=- tag=- comm=0");
    MPI_Recv(rbuf, 0, MPI_BYTE, MPI_ANY_SOURCE, MPI_ANY_TAG, comms[0], MPI_STATUS_IGNORE);
}

static void t14(void)
{
    PROXY_LOG("COMM_SPLIT color=1 comm=0 newcomm=1");
    MPI_Comm_split(comms[0], 1, proxy_rank, &comms[1]);
}

static void t15(void)
{
    PROXY_LOG("SENDRECV vol=2048 peer=+1 src=-1 tag=7 comm=0");
    MPI_Sendrecv(sbuf, 0, MPI_BYTE, proxy_rank + 1, 7, rbuf, 0, MPI_BYTE, proxy_rank - 1, 7, comms[0], MPI_STATUS_IGNORE);
}

static void t16(void)
{
    PROXY_LOG("SEND vol=64 peer=-1 tag=3 comm=0");
    MPI_Send(sbuf, 0, MPI_BYTE, proxy_rank - 1, 3, comms[0]);
}

static void t17(void)
{
    PROXY_LOG("SEND vol=64 peer=-2 tag=3 comm=0");
    MPI_Send(sbuf, 0, MPI_BYTE, proxy_rank - 2, 3, comms[0]);
}

static void t18(void)
{
    PROXY_LOG("SENDRECV vol=2048 peer=-3 src=-1 tag=7 comm=0");
    MPI_Sendrecv(sbuf, 0, MPI_BYTE, proxy_rank - 3, 7, rbuf, 0, MPI_BYTE, proxy_rank - 1, 7, comms[0], MPI_STATUS_IGNORE);
}

static void t19(void)
{
    PROXY_LOG("SEND vol=64 peer=-3 tag=3 comm=0");
    MPI_Send(sbuf, 0, MPI_BYTE, proxy_rank - 3, 3, comms[0]);
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
    sbuf = calloc(16384u, 1);
    rbuf = calloc(16384u, 1);
    if (!sbuf || !rbuf) {
        MPI_Abort(MPI_COMM_WORLD, 2);
    }
    if (proxy_rank == 0) {
        t0();
        t1();
        t2();
        t3();
        t4();
        t5();
        t6();
        t7();
        t8();
        t9();
        t10();
        t11();
        t12();
        { unsigned long long k_; for (k_ = 0; k_ < 3ULL; k_++) t13(); }
        t9();
    }
    if (proxy_rank == 1) {
        t0();
        t14();
        t2();
        t3();
        t4();
        t5();
        t6();
        t7();
        t15();
        t9();
        t10();
        t11();
        t12();
        t16();
        t9();
    }
    if (proxy_rank == 2) {
        t0();
        t1();
        t2();
        t3();
        t4();
        t5();
        t6();
        t7();
        t15();
        t9();
        t10();
        t11();
        t12();
        t17();
        t9();
    }
    if (proxy_rank == 3) {
        t0();
        t14();
        t2();
        t3();
        t4();
        t5();
        t6();
        t7();
        t18();
        t9();
        t10();
        t11();
        t12();
        t19();
        t9();
    }
    free(sbuf);
    free(rbuf);
    MPI_Finalize();
    return 0;
}
