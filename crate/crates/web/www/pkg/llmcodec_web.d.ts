/* tslint:disable */
/* eslint-disable */

/**
 * Renders the few-shot prompt of an episode given as JSON.
 */
export function buildPrompt(episode: string): string;

/**
 * Quantizes a synthetic latent of `frames` frames with a synthetic vocabulary
 * and reports, per layer, its words and the residual energy left behind.
 */
export function rvqDemo(frames: number, strides: string, seed: bigint): string;

/**
 * Tokens per second for `strides` such as `"4,2,1"`.
 */
export function tokensPerSecond(sample_rate: number, total_downsample: number, strides: string): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly buildPrompt: (a: number, b: number) => [number, number, number, number];
    readonly rvqDemo: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly tokensPerSecond: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
