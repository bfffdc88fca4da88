/* tslint:disable */
/* eslint-disable */

export function alphaSweep(seed: number, hidden: number, channels: number, max_scale: number, samples: number): Float64Array;

export function gammaCurve(steps: number, beta_start: number, beta_end: number): Float64Array;

export function gridOffsets(src_h: number, src_w: number, tgt_h: number, tgt_w: number): Float64Array;

export function magnify(lr_size: number, scale: number, seed: number, bicubic: boolean): Uint8Array;

export function noisedImage(steps: number, beta_start: number, beta_end: number, t: number, size: number, seed: number): Uint8Array;

export function normalizePair(a1: number, a2: number): Float64Array;

export function targetSide(lr_size: number, scale: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly alphaSweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly gammaCurve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly gridOffsets: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly magnify: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly noisedImage: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly normalizePair: (a: number, b: number) => [number, number, number, number];
    readonly targetSide: (a: number, b: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
